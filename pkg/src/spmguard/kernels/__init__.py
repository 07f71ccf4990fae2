"""Hot numeric kernels.

Two interchangeable backends live here: ``numba_backend`` (``@njit`` loops)
and ``numpy_backend`` (vectorized numpy, no compilation). Both expose the
same functions and return identical results for identical inputs, including
the epidemic kernels, which consume caller-supplied uniform draws instead of
owning a random stream.

The backend is chosen once at import time from the ``SPMGUARD_BACKEND``
environment variable (``numba`` or ``numpy``). If numba cannot be imported
the numpy backend is used regardless.
"""

import os

from . import numpy_backend

try:
    from . import numba_backend
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba_backend = None

_requested = os.environ.get("SPMGUARD_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"SPMGUARD_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba" and numba_backend is not None:
    backend = numba_backend
    BACKEND = "numba"
else:
    backend = numpy_backend
    BACKEND = "numpy"

csr_matvec = backend.csr_matvec
connected_components = backend.connected_components
bfs_distance_stats = backend.bfs_distance_stats
k_core_mask = backend.k_core_mask
triangle_counts = backend.triangle_counts
nb_matvec = backend.nb_matvec
epidemic_step = backend.epidemic_step
well_mixed_run = backend.well_mixed_run
rk4_integrate = backend.rk4_integrate

KERNELS = (
    "csr_matvec",
    "connected_components",
    "bfs_distance_stats",
    "k_core_mask",
    "triangle_counts",
    "nb_matvec",
    "epidemic_step",
    "well_mixed_run",
    "rk4_integrate",
)

# Compartment codes shared by every epidemic kernel.
S, I, ID, R = 0, 1, 2, 3

# ODE model codes for rk4_integrate.
ODE_SI, ODE_SIS, ODE_SIR, ODE_SIIDR = 0, 1, 2, 3

__all__ = ["BACKEND", "KERNELS", "backend", "numpy_backend", "numba_backend", *KERNELS]
