"""Budgeted point selection plus the handcrafted and random baselines."""
from __future__ import annotations

import numpy as np

from ..core import PointCloud
from ..errors import MissingRingError
from .labels import budget_count
from .scorer import FeatureScores

LOAM_HALF_WINDOW = 5


def select_points(cloud: PointCloud, scores, budget: float = 0.2):
    """Top ceil(budget*N) points by combined score, ties to the lower index.

    Returns the selected cloud (original relative order kept) and the
    ascending index array.
    """
    n = len(cloud)
    combined = scores.combined if isinstance(scores, FeatureScores) else np.asarray(scores, dtype=float)
    if len(combined) != n:
        raise ValueError(f"{len(combined)} scores for {n} points")
    k = budget_count(budget, n)
    order = np.lexsort((np.arange(n), -combined))
    idx = np.sort(order[:k])
    return cloud.subset(idx), idx


def random_baseline(cloud: PointCloud, budget: float, seed=0):
    """Uniformly random subset of exactly budget_count points; ``seed`` is anything default_rng takes."""
    n = len(cloud)
    k = budget_count(budget, n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False)) if k < n else np.arange(n)
    return cloud.subset(idx), idx


def _ring_groups(cloud):
    if cloud.ring is None:
        raise MissingRingError(
            "LOAM selection needs per-point ring indices; use select_points with descriptor "
            "scores (learned or label selectors) for clouds without rings")
    rings = cloud.ring
    for r in np.unique(rings):
        yield int(r), np.nonzero(rings == r)[0]


def loam_smoothness(cloud: PointCloud):
    """Per-point LOAM smoothness; NaN where a point lacks 5 in-ring
    neighbours on either side."""
    c = np.full(len(cloud), np.nan)
    h = LOAM_HALF_WINDOW
    for _, ids in _ring_groups(cloud):
        m = len(ids)
        if m < 2 * h + 1:
            continue
        p = cloud.xyz[ids]
        csum = np.vstack([np.zeros(3), np.cumsum(p, axis=0)])
        centre = np.arange(h, m - h)
        window = csum[centre + h + 1] - csum[centre - h]
        diff = window - (2 * h + 1) * p[centre]
        norm_p = np.linalg.norm(p[centre], axis=1)
        c[ids[centre]] = np.linalg.norm(diff, axis=1) / (2 * h * np.where(norm_p > 0, norm_p, np.inf))
    return c


def _pick_ring(ids, c, edge_count, planar_count):
    ok = ids[~np.isnan(c[ids])]
    if len(ok) == 0:
        return ok, ok
    vals = c[ok]
    by_high = ok[np.lexsort((ok, -vals))]
    edges = by_high[:edge_count]
    rest = np.setdiff1d(ok, edges, assume_unique=True)
    by_low = rest[np.lexsort((rest, c[rest]))]
    planars = by_low[:planar_count]
    return edges, planars


def loam_baseline(cloud: PointCloud, edge_count: int = 2, planar_count: int = 4, return_split=False):
    """Per ring: the ``edge_count`` sharpest and ``planar_count`` smoothest points."""
    c = loam_smoothness(cloud)
    edges, planars = [], []
    for _, ids in _ring_groups(cloud):
        e, p = _pick_ring(ids, c, edge_count, planar_count)
        edges.append(e)
        planars.append(p)
    edges = np.concatenate(edges) if edges else np.empty(0, np.int64)
    planars = np.concatenate(planars) if planars else np.empty(0, np.int64)
    idx = np.union1d(edges, planars).astype(np.int64)
    if return_split:
        return cloud.subset(idx), idx, np.sort(edges), np.sort(planars)
    return cloud.subset(idx), idx


def loam_budget_select(cloud: PointCloud, budget: float, edge_fraction: float = 0.25):
    """LOAM selection sized to exactly ceil(budget*N) points.

    The point budget is shared between rings in proportion to their eligible
    points (largest-remainder rounding); each ring spends ``edge_fraction`` of
    its share on edges and the rest on planar points.
    """
    n = len(cloud)
    k = budget_count(budget, n)
    c = loam_smoothness(cloud)
    groups = [(r, ids[~np.isnan(c[ids])]) for r, ids in _ring_groups(cloud)]
    eligible = np.array([len(g) for _, g in groups], dtype=float)
    total = eligible.sum()
    if total <= k:
        idx = np.sort(np.concatenate([g for _, g in groups])) if groups else np.empty(0, np.int64)
        return cloud.subset(idx), idx
    quota = k * eligible / total
    alloc = np.floor(quota).astype(int)
    short = k - alloc.sum()
    frac_order = np.lexsort((np.arange(len(quota)), -(quota - alloc)))
    alloc[frac_order[:short]] += 1
    chosen = []
    for (_, ids), a in zip(groups, alloc):
        if a == 0:
            continue
        ne = min(a, int(np.ceil(edge_fraction * a)))
        e, p = _pick_ring(ids, c, ne, a - ne)
        chosen.extend([e, p])
    idx = np.sort(np.concatenate(chosen)).astype(np.int64)
    return cloud.subset(idx), idx
