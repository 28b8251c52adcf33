"""Numba switch for the hot kernels.

Every hot kernel exists twice: a compiled loop version and a vectorized
numpy version.  ``HDMR_HOMOG_NUMBA=0`` in the environment selects the
numpy versions at import time; both stay importable for cross-checks.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_flag = os.environ.get("HDMR_HOMOG_NUMBA", "1").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(fn):
    if not HAVE_NUMBA:  # pragma: no cover
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def select(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
