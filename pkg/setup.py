"""Compiles the simulator hot paths with Cython when it is available.

The .py modules stay the source of truth; the .pxd files next to them add
static types.  Set ORAPSIM_PURE=1 to skip compilation entirely.
"""

import os

from setuptools import setup

MODULES = ["addrmap", "baseline_pf", "blp_buffer", "cache", "core", "dram", "hsd",
           "metrics", "mitigation", "orap", "sim"]


def extensions():
    if os.environ.get("ORAPSIM_PURE"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize([f"src/orapsim/{m}.py" for m in MODULES], quiet=True,
                     compiler_directives={"language_level": 3, "annotation_typing": False})


setup(ext_modules=extensions())
