"""Exact kd-tree search and Generalized-ICP scan-to-map alignment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _accel
from .core import SE3, PointCloud
from .errors import EmptyCloudError, InsufficientOverlapError, LioSelectError


def _as_points(cloud):
    if isinstance(cloud, PointCloud):
        return np.ascontiguousarray(cloud.xyz)
    return np.ascontiguousarray(np.asarray(cloud, dtype=float).reshape(-1, 3))


class KdTree:
    """Balanced 3-d tree, one node per point. Immutable after build.

    Queries are exact and return neighbours sorted by (distance, index), so
    results are identical to a brute-force scan.
    """

    def __init__(self, points):
        pts = _as_points(points).copy()
        if pts.shape[0] == 0:
            raise EmptyCloudError("cannot build a kd-tree over an empty cloud")
        pts.setflags(write=False)
        self.points = pts
        self._perm, self._dims = _accel.kdtree_build(pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def node_count(self):
        return self.points.shape[0]

    def knn_sq(self, queries, k):
        q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, 3))
        return _accel.kdtree_knn(self.points, self._perm, self._dims, q, int(k))

    def knn(self, queries, k):
        """Indices and Euclidean distances of the k nearest points.

        A single 3-vector query returns 1-d arrays of length min(k, N).
        """
        single = np.asarray(queries).ndim == 1
        idx, d2 = self.knn_sq(queries, k)
        dist = np.sqrt(d2)
        if single:
            return idx[0], dist[0]
        return idx, dist


def build_kdtree(cloud) -> KdTree:
    return KdTree(cloud)


def regularize_covariances(raw, plane_epsilon=1e-3):
    """Replace each covariance's spectrum by (1, 1, eps), keeping its eigenbasis.

    Neighbourhoods with a zero largest eigenvalue become the identity and are
    flagged in the returned boolean array.
    """
    raw = np.ascontiguousarray(raw, dtype=float).reshape(-1, 3, 3)
    vals, vecs = _accel.eigh3_batch(raw)
    degenerate = ~(vals[:, 0] > 1e-300)
    eig = np.array([1.0, 1.0, plane_epsilon])
    covs = np.einsum("nij,j,nkj->nik", vecs, eig, vecs)
    covs[degenerate] = np.eye(3)
    return covs, degenerate


def estimate_covariances(cloud, k=10, plane_epsilon=1e-3, tree: Optional[KdTree] = None):
    """Plane-regularised per-point covariances from k-NN neighbourhoods.

    Returns ``(covs, degenerate)``; covs has shape (N, 3, 3).
    """
    if k < 4:
        raise LioSelectError(f"covariance neighbourhood needs k >= 4, got {k}")
    pts = _as_points(cloud)
    tree = tree or KdTree(pts)
    nbr, _ = tree.knn_sq(pts, k)
    raw = _accel.neighborhood_cov(tree.points, nbr)
    return regularize_covariances(raw, plane_epsilon)


@dataclass(frozen=True)
class GicpConfig:
    max_iterations: int = 30
    translation_eps: float = 1e-4
    rotation_eps: float = 1e-4
    max_correspondence_dist: float = 1.0
    covariance_k: int = 10
    plane_epsilon: float = 1e-3
    damping_init: float = 1e-6
    max_retries: int = 5
    degeneracy_ratio: float = 1e-6
    min_correspondences: int = 10
    # pairs whose plane normals differ by more than this are not matched;
    # pi/2 or more turns the check off
    max_normal_angle: float = math.pi / 2

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise LioSelectError(f"GicpConfig.{name} must be positive")


class GicpTarget:
    """Registration target: points, their kd-tree and covariances."""

    def __init__(self, points, covs=None, tree: Optional[KdTree] = None, cfg: GicpConfig = GicpConfig()):
        pts = _as_points(points)
        if pts.shape[0] < cfg.covariance_k:
            raise LioSelectError(
                f"target has {pts.shape[0]} points, needs at least covariance_k={cfg.covariance_k}")
        self.tree = tree or KdTree(pts)
        self.points = self.tree.points
        if covs is None:
            covs, _ = estimate_covariances(self.points, cfg.covariance_k, cfg.plane_epsilon, self.tree)
        self.covs = np.ascontiguousarray(covs)
        self._normals = None

    @property
    def normals(self):
        """Smallest-eigenvalue eigenvector of every target covariance (lazy)."""
        if self._normals is None:
            self._normals = covariance_normals(self.covs)
        return self._normals

    def __len__(self):
        return self.points.shape[0]


@dataclass
class GicpIteration:
    iteration: int
    correspondences: int
    cost_before: float
    cost_after: float
    accepted: bool
    damping: float
    step_rotation: float
    step_translation: float


@dataclass
class GicpResult:
    pose: SE3
    iterations: int
    final_cost: float
    converged: bool
    hessian: np.ndarray
    degenerate: bool
    correspondences: int = 0
    log: List[GicpIteration] = field(default_factory=list)
    # point-to-plane information at the last correspondences; ``degenerate``
    # is judged on this, not on ``hessian``
    information: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))


def _plane_information(q, normals):
    """Sum of g g^T over point-to-plane rows g = [q x n; n].

    The regularised covariances give every pair unit tangential weight, so
    the GICP Hessian never loses rank; this matrix does when the geometry
    leaves a direction unconstrained (one plane, a featureless corridor).
    """
    g = np.hstack([np.cross(q, normals), normals])
    return g.T @ g


def _weak_split(info, ratio):
    """(well-constrained eigenvectors, degenerate?) of an information matrix."""
    vals, vecs = np.linalg.eigh(info)
    lam_max = vals[-1]
    if not lam_max > 0.0:
        return vecs[:, :0], True
    keep = vals >= ratio * lam_max
    return vecs[:, keep], not keep.all()


def _solve_step(H, b, damping, basis=None):
    """Damped Gauss-Newton step, restricted to span(basis) when given."""
    if basis is None:
        Hd = H + damping * np.diag(np.diag(H))
        return -np.linalg.solve(Hd, b)
    if basis.shape[1] == 0:
        return np.zeros(6)
    Hr = basis.T @ H @ basis
    Hr = Hr + damping * np.diag(np.diag(Hr))
    return -(basis @ np.linalg.solve(Hr, basis.T @ b))


def covariance_normals(covs) -> np.ndarray:
    if len(covs) == 0:
        return np.zeros((0, 3))
    _, vecs = _accel.eigh3_batch(np.ascontiguousarray(covs))
    return np.ascontiguousarray(vecs[:, :, 2])


def gicp_align(source, target: GicpTarget, init: SE3 = SE3(), cfg: GicpConfig = GicpConfig(),
               source_covs=None) -> GicpResult:
    """Align ``source`` (body frame) to ``target``; returns target<-source.

    Levenberg-damped Gauss-Newton on a left-multiplied twist. Correspondences
    are re-found at the start of every iteration and held fixed while the
    damping loop looks for a cost decrease.
    """
    src = _as_points(source)
    if src.shape[0] < 10:
        raise LioSelectError(f"source has {src.shape[0]} points, needs at least 10")
    if source_covs is None:
        source_covs, _ = estimate_covariances(src, cfg.covariance_k, cfg.plane_epsilon)
    source_covs = np.ascontiguousarray(source_covs)
    tgt_pts, tgt_covs = target.points, target.covs
    tgt_normals = target.normals
    # steps are measured where the source sits, so the stopping rule does not
    # depend on where the world origin is
    centre = src.mean(axis=0)
    max_d2 = cfg.max_correspondence_dist ** 2
    check_normals = cfg.max_normal_angle < math.pi / 2
    if check_normals:
        min_cos = math.cos(cfg.max_normal_angle)
        src_normals = covariance_normals(source_covs)

    T = init
    damping = cfg.damping_init
    log: List[GicpIteration] = []
    converged = False
    H = np.zeros((6, 6))
    degenerate = True
    info = np.zeros((6, 6))
    final_cost = math.inf
    count = 0
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        R = np.ascontiguousarray(T.R)
        t = np.ascontiguousarray(T.translation)
        idx, d2 = target.tree.knn_sq(src @ R.T + t, 1)
        ok = d2[:, 0] <= max_d2
        if check_normals:
            ok &= np.abs(np.einsum("ij,ij->i", src_normals @ R.T, tgt_normals[idx[:, 0]])) >= min_cos
        corr = np.where(ok, idx[:, 0], -1)
        count = int((corr >= 0).sum())
        if count < cfg.min_correspondences:
            raise InsufficientOverlapError(count, cfg.min_correspondences)
        H, b, cost, _ = _accel.gicp_accumulate(src, source_covs, R, t, tgt_pts, tgt_covs, corr, True)
        live = corr >= 0
        info = _plane_information(src[live] @ R.T + t, tgt_normals[corr[live]])
        basis, degenerate = _weak_split(info, cfg.degeneracy_ratio)
        final_cost = cost / count
        accepted = False
        step_small = False
        for _ in range(cfg.max_retries + 1):
            xi = _solve_step(H, b, damping, basis if degenerate else None)
            T_new = SE3.exp(xi) @ T
            d_rot = float(np.linalg.norm(xi[:3]))
            d_trans = float(np.linalg.norm(T_new.apply(centre) - T.apply(centre)))
            step_small = d_rot < cfg.rotation_eps and d_trans < cfg.translation_eps
            _, _, cost_new, _ = _accel.gicp_accumulate(
                src, source_covs, np.ascontiguousarray(T_new.R), np.ascontiguousarray(T_new.translation),
                tgt_pts, tgt_covs, corr, False)
            if cost_new < cost:
                accepted = True
                log.append(GicpIteration(it, count, cost, cost_new, True, damping, d_rot, d_trans))
                T = T_new
                final_cost = cost_new / count
                damping = max(damping / 10.0, cfg.damping_init)
                break
            if step_small:
                break
            damping *= 10.0
        if not accepted:
            log.append(GicpIteration(it, count, cost, cost, False, damping, d_rot, d_trans))
        if step_small:
            converged = True
            break
        if not accepted:
            break
    return GicpResult(pose=T, iterations=it, final_cost=final_cost, converged=converged,
                      hessian=0.5 * (H + H.T), degenerate=degenerate, correspondences=count, log=log,
                      information=info)
