"""Where Next-Column prefetching removes DRAM activations, and where it cannot.

Each trace runs three times on the Zen4 single-core preset: the next-line
baseline, ORAP, and ORAP with HSD.  For each run the script prints activations
per kilo-instruction, the change against the baseline, the rowbuffer hit
rate of Next-Column prefetches and their usefulness.
"""

import argparse

from orapsim import metrics
from orapsim.config import preset, with_setup
from orapsim.sim import simulate
from orapsim.trace import TraceSpec, generate

PANEL = [
    ("4 streams, moderate load", dict(generator="stream", stream_count=4, instr_gap=24)),
    ("1 stream", dict(generator="stream", stream_count=1, instr_gap=16)),
    ("4 streams, saturated bus", dict(generator="stream", stream_count=4, instr_gap=8)),
    ("2 streams, 128 B stride", dict(generator="stride", stride_bytes=128, stream_count=2, instr_gap=16)),
    ("2 streams, 256 B stride", dict(generator="stride", stride_bytes=256, stream_count=2, instr_gap=16)),
]


def describe(r, base):
    a = metrics.apki(r)
    text = f"APKI {a:6.2f}"
    if base is not None:
        text += f" ({100 * (a / base - 1):+6.1f}%)"
        issued = r.prefetch_issued.get("llc.next_column", 0)
        use = f"{metrics.usefulness(r, 'llc.next_column'):.2f}" if issued else "  - "
        text += f"  NC rowbuffer hits {metrics.rowbuffer_hit_rate(r, 'next_column'):.3f}  NC useful {use}"
    return text


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--records", type=int, default=150_000)
    args = ap.parse_args()
    cfg = preset("paper-1core").replace(warmup_records=args.records // 5)
    for label, spec in PANEL:
        tr = generate(TraceSpec(length_records=args.records, footprint_bytes=2 << 30, seed=7, **spec),
                      cfg.dram.physical_bytes)
        base = None
        print(label)
        for setup in ("next-line", "orap", "orap+hsd"):
            r = simulate(with_setup(cfg, setup), tr)
            print(f"  {setup:>9}: {describe(r, base)}")
            if base is None:
                base = metrics.apki(r)
    print()
    print("Concurrent unit-stride streams conflict in every bank; Next-Column fetches the")
    print("following pages' clusters while each row is open and removes most activations.")
    print("A lone stream already finds its rows open.  With strides wider than a line, half")
    print("of each two-line cluster goes unused, usefulness falls under the 80% target and")
    print("the confidence tables shut the engine off, as designed.  On a saturated bus,")
    print("prefetches queue behind demands and often reach the bank after its row closed.")


if __name__ == "__main__":
    main()
