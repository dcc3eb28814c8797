"""Numba switch shared by the hot kernels.

Set ``RCE_NUMBA=0`` in the environment before import to run every kernel as
plain Python/numpy. The uncompiled function of a jitted kernel stays
reachable through ``.py_func`` either way, which is what the benchmark uses.
"""

import os

USE_NUMBA = os.environ.get("RCE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when enabled, otherwise the function itself."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    fn.py_func = fn
    return fn
