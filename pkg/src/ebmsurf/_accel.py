"""Numba/numpy kernel selection.

Hot spatial kernels (ray-triangle intersection, KD-tree traversal, marching
cubes cell scan) ship in two variants: an @njit kernel and a pure-numpy
fallback. Set EBMSURF_DISABLE_NUMBA=1 to force the numpy path, e.g. to verify
results or when numba is unavailable. ``benchmarks/benchmark_kernels.py``
compares the two.
"""

import os

_DISABLE = os.environ.get("EBMSURF_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on",
)

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range

USE_NUMBA = HAVE_NUMBA and not _DISABLE
