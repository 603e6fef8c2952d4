"""Optional numba acceleration.

Set ``PSFCAL_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful for
debugging and for the numba-vs-numpy benchmark).
"""
import os

_disabled = os.environ.get("PSFCAL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


USE_NUMBA = HAS_NUMBA and not _disabled
