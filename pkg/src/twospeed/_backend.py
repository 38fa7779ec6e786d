"""Kernel backend selection.

The hot loops (branching DFS, tridiagonal sweeps) exist twice: a numba
version and a vectorised numpy version.  ``TWOSPEED_BACKEND=numpy`` forces
the numpy path; otherwise numba is used when importable.
"""
import os

try:
    import numba as nb
except ImportError:  # pragma: no cover
    nb = None

BACKEND = os.environ.get("TWOSPEED_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"TWOSPEED_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

HAVE_NUMBA = nb is not None
USE_NUMBA = HAVE_NUMBA and BACKEND == "numba"


def njit(*args, **kwargs):
    """``numba.njit`` with our defaults, or a no-op when numba is missing."""
    kwargs.setdefault("nogil", True)
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda func: func
    return nb.njit(*args, **kwargs)
