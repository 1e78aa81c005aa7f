"""Kernel dispatch.

``LIOSELECT_BACKEND=numpy`` forces the pure-numpy path; the default is numba
when it imports. ``get(name, backend)`` hands out a specific implementation so
tests and the benchmark can compare both.
"""
import logging
import os

from . import _numpy

log = logging.getLogger(__name__)

KERNELS = (
    "kdtree_build",
    "kdtree_knn",
    "eigh3_batch",
    "neighborhood_cov",
    "voxel_reduce",
    "gicp_accumulate",
    "greedy_unique",
    "raycast",
)

try:
    from . import _numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("LIOSELECT_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"LIOSELECT_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAVE_NUMBA:
    log.warning("numba unavailable, using numpy kernels")
    _requested = "numpy"

BACKEND = _requested
BACKENDS = ("numba", "numpy") if HAVE_NUMBA else ("numpy",)


def get(name, backend=None):
    backend = backend or BACKEND
    mod = _numba if backend == "numba" else _numpy
    return getattr(mod, name)


kdtree_build = get("kdtree_build")
kdtree_knn = get("kdtree_knn")
eigh3_batch = get("eigh3_batch")
neighborhood_cov = get("neighborhood_cov")
voxel_reduce = get("voxel_reduce")
gicp_accumulate = get("gicp_accumulate")
greedy_unique = get("greedy_unique")
raycast = get("raycast")


def warmup():
    """Trigger JIT compilation so the first timed scan does not pay for it."""
    if BACKEND != "numba":
        return
    import numpy as np

    rng = np.random.default_rng(0)
    pts = rng.normal(size=(64, 3))
    perm, dims = kdtree_build(pts)
    idx, _ = kdtree_knn(pts, perm, dims, pts, 8)
    covs = neighborhood_cov(pts, idx) + 1e-3 * np.eye(3)
    eigh3_batch(covs)
    voxel_reduce(pts, np.ones(64), 0.5)
    corr = idx[:, 1].copy()
    gicp_accumulate(pts, covs, np.eye(3), np.zeros(3), pts, covs, corr, True)
    G = rng.normal(size=(16, 6))
    greedy_unique(G, np.ones(16, dtype=np.bool_), 8)
    z = np.zeros((1, 3))
    raycast(z, np.array([[0.0, 0.0, -1.0]]), np.zeros(1), np.array([[-1.0, -1.0, -1.0]]),
            np.array([[2.0, 0.0, 0.0]]), np.array([[0.0, 2.0, 0.0]]), np.array([[0.0, 0.0, 1.0]]),
            np.array([[[0.25, 0.0], [0.0, 0.25]]]), np.zeros((1, 3)), np.zeros((1, 3)),
            np.zeros(1) + 0.1, 10.0)
