"""Per-point geometric descriptors from k-nearest-neighbour covariances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _accel
from ..core import PointCloud
from ..errors import EmptyCloudError, LioSelectError
from ..registration import KdTree

DESCRIPTOR_NAMES = (
    "linearity",
    "planarity",
    "sphericity",
    "density",
    "range",
    "height",
    "normal_vertical",
    "intensity",
    "neighborhood_radius",
    "curvature",
)
DESCRIPTOR_DIM = len(DESCRIPTOR_NAMES)
# largest eigenvalue (m^2) below which a neighbourhood counts as a single point
_DEGENERATE_EIG = 1e-20


@dataclass(frozen=True, eq=False)
class Descriptors:
    values: np.ndarray      # (N, 10), column order DESCRIPTOR_NAMES
    normals: np.ndarray     # (N, 3), smallest-eigenvalue eigenvector
    degenerate: np.ndarray  # (N,) bool

    def __len__(self):
        return self.values.shape[0]

    def column(self, name):
        return self.values[:, DESCRIPTOR_NAMES.index(name)]


def descriptors_from_neighbors(xyz, intensity, nbr, nbr_d2, raw_cov=None) -> Descriptors:
    """Descriptors given precomputed neighbour indices and squared distances.

    ``raw_cov`` may be passed when the neighbourhood covariances already
    exist (the odometry loop shares them with registration).
    """
    xyz = np.ascontiguousarray(xyz, dtype=float)
    n, k = nbr.shape
    if raw_cov is None:
        raw_cov = _accel.neighborhood_cov(xyz, nbr)
    vals, vecs = _accel.eigh3_batch(np.ascontiguousarray(raw_cov))
    l1 = vals[:, 0]
    l2 = np.clip(vals[:, 1], 0.0, None)
    l3 = np.clip(vals[:, 2], 0.0, None)
    degenerate = ~(l1 > _DEGENERATE_EIG)
    safe = np.where(degenerate, 1.0, l1)
    radius = np.sqrt(nbr_d2[:, -1])
    vol = (4.0 / 3.0) * np.pi * np.where(radius > 0, radius, 1.0) ** 3
    normals = vecs[:, :, 2]
    out = np.empty((n, DESCRIPTOR_DIM))
    out[:, 0] = (l1 - l2) / safe
    out[:, 1] = (l2 - l3) / safe
    out[:, 2] = l3 / safe
    out[:, 3] = k / vol  # points in the ball, query included
    out[:, 4] = np.linalg.norm(xyz, axis=1)
    out[:, 5] = xyz[:, 2]
    out[:, 6] = np.abs(normals[:, 2])
    out[:, 7] = np.clip(np.asarray(intensity, dtype=float) / 255.0, 0.0, 1.0)
    out[:, 8] = radius
    out[:, 9] = l3 / np.where(degenerate, 1.0, l1 + l2 + l3)
    out[degenerate] = 0.0
    normals = np.where(degenerate[:, None], 0.0, normals)
    return Descriptors(out, normals, degenerate)


def compute_descriptors(cloud, k=10, tree: KdTree | None = None) -> Descriptors:
    """One 10-d descriptor per point from the point and its k nearest neighbours.

    Clouds with fewer than k points give all-degenerate (zero) descriptors.
    """
    if k < 4:
        raise LioSelectError(f"descriptor neighbourhood needs k >= 4, got {k}")
    if isinstance(cloud, PointCloud):
        xyz, intensity = cloud.xyz, cloud.intensity
    else:
        xyz = np.asarray(cloud, dtype=float).reshape(-1, 3)
        intensity = np.zeros(len(xyz))
    n = len(xyz)
    if n == 0:
        raise EmptyCloudError("compute_descriptors needs a non-empty cloud")
    if n < k:
        return Descriptors(np.zeros((n, DESCRIPTOR_DIM)), np.zeros((n, 3)), np.ones(n, dtype=bool))
    tree = tree or KdTree(xyz)
    nbr, d2 = tree.knn_sq(xyz, min(k + 1, n))
    return descriptors_from_neighbors(xyz, intensity, nbr, d2)
