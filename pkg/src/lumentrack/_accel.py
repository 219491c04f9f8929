"""JIT switch for the numeric kernels.

Set ``LUMENTRACK_DISABLE_NUMBA=1`` before import to run the pure-numpy
fallbacks instead of the numba-compiled kernels. The two paths are
expected to agree to floating-point round-off (see tests/test_kernels.py).
"""
import os

_FLAG = os.environ.get("LUMENTRACK_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = _FLAG not in ("1", "true", "yes", "on")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap
