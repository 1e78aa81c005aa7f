"""Training labels: persistence across scans and 6-DOF constraint stability."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .. import _accel
from ..core import SE3, PointCloud
from ..errors import DegenerateNormalsError, LioSelectError, SequenceTooShortError
from ..registration import KdTree


# surface variation above which a neighbourhood normal is not trusted for the
# uniqueness greedy: corners and edges give tilted normals that look like
# information in exactly the weakly constrained directions
UNIQUE_MAX_CURVATURE = 0.0005


def unreliable_normals(descriptors, max_curvature: float = UNIQUE_MAX_CURVATURE) -> np.ndarray:
    """Degenerate or non-planar neighbourhoods; excluded from uniqueness candidacy."""
    return np.asarray(descriptors.degenerate, dtype=bool) | (descriptors.column("curvature") > max_curvature)


def budget_count(budget: float, n: int) -> int:
    """ceil(budget * n), immune to float noise such as 0.7 * 10 = 7.000000000000001."""
    if not 0.0 < budget <= 1.0:
        raise LioSelectError(f"budget must be in (0, 1], got {budget}")
    return min(n, int(math.ceil(round(budget * n, 9))))


def _xyz(c):
    return c.xyz if isinstance(c, PointCloud) else np.asarray(c, dtype=float).reshape(-1, 3)


def salient_window(t: int, n_scans: int, window: int):
    """Scan indices a point of scan t is checked against."""
    if t + window < n_scans:
        return list(range(t + 1, t + window + 1))
    return list(range(t - 1, t - window - 1, -1))


def label_salient(scans: Sequence, poses: Sequence[SE3], window: int = 5, radius: float = 0.3,
                  quorum: int = 3) -> List[np.ndarray]:
    """Persistence labels: 1 where at least ``quorum`` of the ``window``
    following scans (preceding ones near the end of the sequence) hold a
    point within ``radius`` once everything is in the world frame."""
    if len(scans) != len(poses):
        raise LioSelectError("label_salient needs one pose per scan")
    if len(scans) < window + 1:
        raise SequenceTooShortError(f"need at least {window + 1} scans, got {len(scans)}")
    world = [np.ascontiguousarray(T.apply(_xyz(c))) for c, T in zip(scans, poses)]
    trees = [KdTree(w) if len(w) else None for w in world]
    r2 = radius * radius
    labels = []
    for t, pts in enumerate(world):
        hits = np.zeros(len(pts), dtype=np.int64)
        if len(pts):
            for j in salient_window(t, len(world), window):
                if trees[j] is None:
                    continue
                _, d2 = trees[j].knn_sq(pts, 1)
                hits += d2[:, 0] <= r2
        labels.append(hits >= quorum)
    return labels


@dataclass(frozen=True, eq=False)
class UniqueLabels:
    labels: np.ndarray       # (N,) bool
    order: np.ndarray        # selected indices in greedy order
    gram: np.ndarray         # 6x6 Gram matrix of the selected set
    min_eigenvalue: float
    degenerate: bool         # selected geometry cannot constrain all 6 DOF


def constraint_vectors(xyz, normals):
    """Rows g = [p x n; n], the pose directions each point-to-plane term constrains."""
    xyz = np.asarray(xyz, dtype=float)
    normals = np.asarray(normals, dtype=float)
    return np.ascontiguousarray(np.hstack([np.cross(xyz, normals), normals]))


def gram_min_eigenvalue(G):
    return float(np.linalg.eigvalsh(G.T @ G)[0]) if len(G) else 0.0


def label_unique(cloud, normals, budget: float = 0.2, degenerate=None) -> UniqueLabels:
    """Greedy constraint-stability labels.

    Repeatedly adds the point whose constraint vector most raises the smallest
    eigenvalue of the accumulated Gram matrix; ties fall to the component
    outside the current span, then to the lower index.
    """
    xyz = _xyz(cloud)
    n = len(xyz)
    K = budget_count(budget, n)
    normals = np.asarray(normals, dtype=float).reshape(n, 3)
    bad = ~np.all(np.isfinite(normals), axis=1) | (np.linalg.norm(normals, axis=1) < 0.5)
    if degenerate is not None:
        bad |= np.asarray(degenerate, dtype=bool)
    eligible = ~bad
    if not eligible.any():
        raise DegenerateNormalsError("every point has a degenerate normal")
    G = constraint_vectors(xyz, normals)
    order = _accel.greedy_unique(G, np.ascontiguousarray(eligible), K)
    labels = np.zeros(n, dtype=bool)
    labels[order] = True
    gram = G[order].T @ G[order]
    vals = np.linalg.eigvalsh(gram)
    degenerate_set = not (vals[0] > 1e-9 * max(vals[-1], 1e-300))
    return UniqueLabels(labels, order, gram, float(vals[0]), degenerate_set)
