"""Trajectory error metrics and classifier scoring."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..core import SE3, rot_to_quat
from ..errors import AssociationError, LioSelectError
from .trajectory import Trajectory

ASSOCIATION_TOLERANCE = 0.010


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    median: float
    max: float
    count: int
    errors: np.ndarray = field(repr=False, compare=False, default=None)

    @classmethod
    def of(cls, errors):
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            raise AssociationError("no errors to summarise")
        return cls(float(np.sqrt(np.mean(e ** 2))), float(e.mean()), float(np.median(e)),
                   float(e.max()), int(e.size), e)


def associate(est: Trajectory, gt: Trajectory, tol: float = ASSOCIATION_TOLERANCE):
    """Pair each estimate row with the nearest ground-truth stamp within ``tol``.

    Returns index arrays (est_idx, gt_idx)."""
    if len(est) == 0 or len(gt) == 0:
        raise AssociationError("empty trajectory")
    pos = np.searchsorted(gt.stamps, est.stamps)
    lo = np.clip(pos - 1, 0, len(gt) - 1)
    hi = np.clip(pos, 0, len(gt) - 1)
    pick = np.where(np.abs(gt.stamps[lo] - est.stamps) <= np.abs(gt.stamps[hi] - est.stamps), lo, hi)
    ok = np.abs(gt.stamps[pick] - est.stamps) <= tol
    if not ok.any():
        raise AssociationError(f"no estimate stamp within {tol * 1e3:.0f} ms of ground truth")
    return np.nonzero(ok)[0], pick[ok]


def align_se3(src: np.ndarray, dst: np.ndarray) -> SE3:
    """Rigid transform G minimising sum |dst - G src|^2 (Kabsch, no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 2:
        raise AssociationError("SE(3) alignment needs at least 2 associated poses")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return SE3(rot_to_quat(R), mu_d - R @ mu_s)


def ate(est: Trajectory, gt: Trajectory, align: str = "se3", tol: float = ASSOCIATION_TOLERANCE):
    """Absolute translational error after optional rigid alignment."""
    if align not in ("none", "se3"):
        raise LioSelectError(f"align must be 'none' or 'se3', got {align!r}")
    ie, ig = associate(est, gt, tol)
    if len(ie) < 2:
        raise AssociationError(f"ATE needs >= 2 associated poses, got {len(ie)}")
    pe = est.translations()[ie]
    pg = gt.translations()[ig]
    if align == "se3":
        G = align_se3(pe, pg)
        pe = G.apply(pe)
    return ErrorStats.of(np.linalg.norm(pe - pg, axis=1))


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1, tol: float = ASSOCIATION_TOLERANCE):
    """Relative pose error over ``delta`` associated steps; returns (translation, rotation) stats."""
    if delta < 1:
        raise LioSelectError("delta must be >= 1")
    ie, ig = associate(est, gt, tol)
    if len(ie) <= delta:
        raise AssociationError(f"need more than {delta} associated poses for RPE")
    et, er = [], []
    for a in range(len(ie) - delta):
        b = a + delta
        d_est = est.poses[ie[a]].inverse() @ est.poses[ie[b]]
        d_gt = gt.poses[ig[a]].inverse() @ gt.poses[ig[b]]
        err = d_gt.inverse() @ d_est
        et.append(np.linalg.norm(err.translation))
        er.append(err.angle())
    return ErrorStats.of(et), ErrorStats.of(er)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get half credit)."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise LioSelectError("scores and labels differ in length")
    npos = int(labels.sum())
    nneg = labels.size - npos
    if npos == 0 or nneg == 0:
        raise LioSelectError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))
