"""Kernel backend selection: numba JIT by default, pure numpy on request.

The hot integration loops in ``nessim._kernels`` are written in a
numba-compatible subset of Python/numpy.  By default they are compiled
with ``numba.njit``.  Setting the environment variable ``NESSIM_NUMBA=0``
before import selects the uncompiled pure-Python/numpy path instead
(slower, useful for debugging and for benchmarking the JIT speedup).
"""

import os

_flag = os.environ.get("NESSIM_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "off", "no")

if _requested:
    try:
        import numba

        USE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but be safe
        numba = None
        USE_NUMBA = False
else:
    numba = None
    USE_NUMBA = False


def jit_kernel(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend_info() -> dict:
    """Describe the active kernel backend (for logs and benchmark output)."""
    info = {"backend": "numba" if USE_NUMBA else "numpy", "env_flag": _flag}
    if USE_NUMBA:
        info["numba_version"] = numba.__version__
    return info
