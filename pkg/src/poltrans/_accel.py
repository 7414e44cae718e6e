"""Switch between numba-compiled and pure-numpy hot loops.

Set ``POLTRANS_DISABLE_NUMBA=1`` to force the numpy implementations
(useful for debugging and for machines without a working LLVM).
"""
import os

_FLAG = os.environ.get("POLTRANS_DISABLE_NUMBA", "").strip().lower()

# Prefer OpenMP/workqueue so an outdated system TBB is never probed.
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def maybe_njit(**options):
    """Compile with ``numba.njit`` when available, otherwise return the function.

    Functions decorated this way are only ever called through
    :func:`select`, so the uncompiled version is never used in loops.
    """
    def wrap(func):
        if not HAVE_NUMBA:
            return func
        return njit(cache=True, **options)(func)
    return wrap


def select(numba_impl, numpy_impl, use_numba=None):
    """Return the implementation chosen by the environment flag."""
    if use_numba is None:
        use_numba = USE_NUMBA
    return numba_impl if (use_numba and HAVE_NUMBA) else numpy_impl


if not HAVE_NUMBA:  # pragma: no cover
    prange = range

__all__ = ["USE_NUMBA", "HAVE_NUMBA", "maybe_njit", "select", "prange"]
