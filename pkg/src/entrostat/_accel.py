"""Optional numba acceleration.

Set ENTROSTAT_DISABLE_NUMBA=1 to run every kernel as plain Python/numpy.
The flag is read once at import time.
"""

import os

try:
    from numba import njit as _njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    _njit = None
    NUMBA_AVAILABLE = False

NUMBA_DISABLED = os.environ.get("ENTROSTAT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED


def optional_njit(*args, **kwargs):
    """njit when numba is usable, identity otherwise."""
    if len(args) == 1 and callable(args[0]) and not kwargs:
        func = args[0]
        return _njit(cache=True, nogil=True)(func) if USE_NUMBA else func

    def decorator(func):
        if USE_NUMBA:
            kwargs.setdefault("cache", True)
            kwargs.setdefault("nogil", True)  # lets worker threads run kernels concurrently
            return _njit(*args, **kwargs)(func)
        return func

    return decorator
