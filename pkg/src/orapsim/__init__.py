"""Trace-driven memory hierarchy simulator with a row-aware LLC prefetcher and DDR5 Rowhammer mitigations."""

__version__ = "0.1.0"
