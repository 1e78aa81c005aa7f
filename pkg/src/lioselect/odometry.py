"""The per-scan odometry loop: propagate, deskew, voxelize, select, register,
keyframe, account."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _accel
from .core import SE3, NavState, PointCloud
from .errors import InsufficientOverlapError, LioSelectError
from .features.descriptors import descriptors_from_neighbors
from .features.scorer import FeatureScores, ScorerModel, scorer_forward
from .features.selection import loam_budget_select, random_baseline, select_points
from .preprocess import ImuBuffer, MotionTrajectory, VoxelConfig, deskew, integrate_imu, voxel_downsample
from .registration import GicpConfig, GicpTarget, KdTree, gicp_align, regularize_covariances

log = logging.getLogger(__name__)

SELECTORS = ("full", "learned", "salient-unique-labels", "loam", "random")
# x, y, z, intensity, t_offset as float32
POINT_RECORD_BYTES = 20
# point index (u32), split axis (u8) + padding, split value (f32)
NODE_RECORD_BYTES = 12
STAGES = ("imu", "deskew", "voxel", "neighbors", "select", "submap", "register", "keyframe")


@dataclass(frozen=True)
class PipelineConfig:
    selector: str = "full"
    budget: float = 0.2
    keyframe_dist: float = 1.0
    keyframe_rot: float = 0.35
    submap_k: int = 10
    submap_rebuild_frac: float = 0.5
    voxel_leaf: float = 0.25
    voxel_mode: str = "centroid"
    descriptor_k: int = 10
    alpha: float = 0.5
    seed: int = 0
    loam_edge_fraction: float = 0.25
    model_path: str = ""
    gravity_z: float = -9.81
    velocity_gain: float = 0.3
    gicp_max_iterations: int = 30
    gicp_translation_eps: float = 1e-4
    gicp_rotation_eps: float = 1e-4
    gicp_max_correspondence_dist: float = 0.5
    gicp_covariance_k: int = 10
    gicp_plane_epsilon: float = 1e-3
    gicp_damping_init: float = 1e-6
    gicp_max_normal_angle: float = 1.5707963267948966

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise LioSelectError(f"unknown selector {self.selector!r}; choose from {', '.join(SELECTORS)}")
        if not 0.0 < self.budget <= 1.0:
            raise LioSelectError(f"budget must be in (0, 1], got {self.budget}")
        for name in ("keyframe_dist", "keyframe_rot", "submap_k", "submap_rebuild_frac", "voxel_leaf"):
            if not getattr(self, name) > 0:
                raise LioSelectError(f"{name} must be > 0")
        if self.descriptor_k < 4:
            raise LioSelectError("descriptor_k must be >= 4")
        if not 0.0 <= self.alpha <= 1.0:
            raise LioSelectError("alpha must be in [0, 1]")
        if not 0.0 < self.velocity_gain <= 1.0:
            raise LioSelectError("velocity_gain must be in (0, 1]")
        self.gicp  # validates the gicp_* fields
        self.voxel

    @property
    def gicp(self) -> GicpConfig:
        return GicpConfig(
            max_iterations=self.gicp_max_iterations, translation_eps=self.gicp_translation_eps,
            rotation_eps=self.gicp_rotation_eps, max_correspondence_dist=self.gicp_max_correspondence_dist,
            covariance_k=self.gicp_covariance_k, plane_epsilon=self.gicp_plane_epsilon,
            damping_init=self.gicp_damping_init, max_normal_angle=self.gicp_max_normal_angle)

    @property
    def voxel(self) -> VoxelConfig:
        return VoxelConfig(self.voxel_leaf, self.voxel_mode)

    @property
    def gravity(self):
        return np.array([0.0, 0.0, self.gravity_z])


PIPELINE_FIELDS = tuple(f.name for f in fields(PipelineConfig))


@dataclass(eq=False)
class Keyframe:
    id: int
    pose: SE3
    cloud: PointCloud          # selected points, body frame
    covs: np.ndarray           # (N, 3, 3), body frame
    tree: KdTree
    created_stamp: float

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise LioSelectError("keyframe cloud must be non-empty")
        if len(self.tree) != len(self.cloud) or len(self.covs) != len(self.cloud):
            raise LioSelectError("keyframe tree/covariances must cover exactly its cloud")


@dataclass(eq=False)
class SubMap:
    keyframe_ids: Tuple[int, ...]
    target: GicpTarget
    built_at: np.ndarray
    version: int = 0

    @property
    def points(self):
        return self.target.points

    @property
    def covs(self):
        return self.target.covs


def map_memory_bytes(keyframes: Sequence[Keyframe]) -> int:
    """Stored map size: point records plus kd-tree node records."""
    return int(sum(len(kf.cloud) * POINT_RECORD_BYTES + kf.tree.node_count * NODE_RECORD_BYTES
                   for kf in keyframes))


def nearest_keyframes(keyframes: Sequence[Keyframe], position, k: int) -> List[Keyframe]:
    """The k keyframes closest in translation; equal distances go to the lower id."""
    position = np.asarray(position, dtype=float)
    d = np.array([np.linalg.norm(kf.pose.translation - position) for kf in keyframes])
    ids = np.array([kf.id for kf in keyframes])
    order = np.lexsort((ids, d))
    return [keyframes[i] for i in order[:k]]


def needs_keyframe(keyframes: Sequence[Keyframe], pose: SE3, dist: float, rot: float) -> bool:
    if not keyframes:
        return True
    nearest = nearest_keyframes(keyframes, pose.translation, 1)[0]
    d_trans, d_rot = nearest.pose.distance(pose)
    return d_trans >= dist or d_rot >= rot


def rebuild_submap(keyframes: Sequence[Keyframe], query_pose: SE3, k: int,
                   gicp: GicpConfig = GicpConfig(), version: int = 0) -> SubMap:
    if not keyframes:
        raise LioSelectError("rebuild_submap needs at least one keyframe")
    chosen = nearest_keyframes(keyframes, query_pose.translation, k)
    chosen.sort(key=lambda kf: kf.id)
    pts = np.concatenate([kf.pose.apply(kf.cloud.xyz) for kf in chosen])
    covs = np.concatenate([np.einsum("ij,njk,lk->nil", kf.pose.R, kf.covs, kf.pose.R) for kf in chosen])
    cfg = gicp if len(pts) >= gicp.covariance_k else GicpConfig(covariance_k=max(1, len(pts)))
    target = GicpTarget(pts, covs, cfg=cfg)
    return SubMap(tuple(kf.id for kf in chosen), target, np.array(query_pose.translation), version)


@dataclass
class ScanStats:
    index: int
    stamp: float
    n_raw: int
    n_voxel: int
    n_selected: int
    realized_budget: float
    iterations: int = 0
    converged: bool = False
    degenerate: bool = False
    dropped: bool = False
    bootstrap: bool = False
    keyframe_added: bool = False
    n_keyframes: int = 0
    map_points: int = 0
    map_bytes: int = 0
    final_cost: float = 0.0
    stage_ms: Dict[str, float] = field(default_factory=dict)

    def deterministic(self):
        d = asdict(self)
        d.pop("stage_ms")
        return d

    @property
    def total_ms(self):
        return float(sum(self.stage_ms.values()))


@dataclass
class RunStats:
    rows: List[ScanStats] = field(default_factory=list)

    def summary(self):
        if not self.rows:
            return {}
        last = self.rows[-1]
        return {
            "scans": len(self.rows),
            "realized_budget": float(np.mean([r.realized_budget for r in self.rows])),
            "keyframes": last.n_keyframes,
            "map_points": last.map_points,
            "map_bytes": last.map_bytes,
            "dropped_scans": int(sum(r.dropped for r in self.rows)),
            "degenerate_scans": int(sum(r.degenerate for r in self.rows)),
            "mean_iterations": float(np.mean([r.iterations for r in self.rows if not r.bootstrap] or [0])),
        }

    def timing(self):
        if not self.rows:
            return {}
        per_stage = {s: float(np.mean([r.stage_ms.get(s, 0.0) for r in self.rows])) for s in STAGES}
        return {"mean_ms_per_scan": float(np.mean([r.total_ms for r in self.rows])),
                "max_ms_per_scan": float(np.max([r.total_ms for r in self.rows])),
                "stage_mean_ms": per_stage}


class LabelTable:
    """Per-scan (raw point index -> salient, unique) labels."""

    def __init__(self):
        self._scans: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def add(self, scan_index, point_index, salient, unique):
        order = np.argsort(point_index, kind="stable")
        self._scans[int(scan_index)] = (np.asarray(point_index, dtype=np.int64)[order],
                                        np.asarray(salient, dtype=np.int8)[order],
                                        np.asarray(unique, dtype=np.int8)[order])

    def __contains__(self, scan_index):
        return int(scan_index) in self._scans

    def __len__(self):
        return len(self._scans)

    def scan_indices(self):
        return sorted(self._scans)

    def get(self, scan_index):
        return self._scans[int(scan_index)]

    def lookup(self, scan_index, raw_index):
        """Labels for the given raw point indices; unlisted points get 0."""
        raw_index = np.asarray(raw_index, dtype=np.int64)
        sal = np.zeros(len(raw_index))
        uni = np.zeros(len(raw_index))
        if int(scan_index) not in self._scans:
            return sal, uni
        pidx, s, u = self._scans[int(scan_index)]
        pos = np.searchsorted(pidx, raw_index)
        pos = np.clip(pos, 0, max(len(pidx) - 1, 0))
        hit = (len(pidx) > 0) & (pidx[pos] == raw_index) if len(pidx) else np.zeros(len(raw_index), bool)
        sal[hit] = s[pos[hit]]
        uni[hit] = u[pos[hit]]
        return sal, uni


def scan_neighborhoods(cloud: PointCloud, k: int):
    """kd-tree, k-NN (indices, squared distances) and raw neighbourhood covariances.

    Each neighbourhood is the point itself plus its k nearest others.
    """
    if len(cloud) == 0:
        raise LioSelectError("cannot build neighbourhoods of an empty cloud")
    tree = KdTree(cloud.xyz)
    nbr, d2 = tree.knn_sq(cloud.xyz, max(1, min(k + 1, len(cloud))))
    return tree, nbr, d2, _accel.neighborhood_cov(tree.points, nbr)


class _Timer:
    def __init__(self):
        self.ms: Dict[str, float] = {}
        self._t = time.perf_counter()

    def lap(self, stage):
        now = time.perf_counter()
        self.ms[stage] = self.ms.get(stage, 0.0) + 1e3 * (now - self._t)
        self._t = now


def _constant_velocity_motion(state: NavState, t0, t1):
    T0 = state.pose
    T1 = SE3(T0.rotation, T0.translation + state.velocity * (t1 - t0))
    if t1 <= t0:
        return MotionTrajectory([t0], [T0])
    return MotionTrajectory([t0, t1], [T0, T1], np.array([state.velocity, state.velocity]))


class Odometry:
    """Single-owner state machine; feed scans in time order via ``process_scan``."""

    def __init__(self, cfg: PipelineConfig = PipelineConfig(), model: Optional[ScorerModel] = None,
                 labels: Optional[LabelTable] = None):
        if cfg.selector == "learned" and model is None:
            raise LioSelectError("the learned selector needs a ScorerModel (--model)")
        if cfg.selector == "salient-unique-labels" and labels is None:
            raise LioSelectError("the salient-unique-labels selector needs a label table (--labels)")
        self.cfg = cfg
        self.model = model
        self.labels = labels
        self.gicp_cfg = cfg.gicp
        self.state: Optional[NavState] = None
        self.keyframes: List[Keyframe] = []
        self.submap: Optional[SubMap] = None
        self._submap_dirty = True
        self._next_index = 0
        self._submap_version = 0

    # -- selection ---------------------------------------------------------

    def _select(self, index, cloud, first_idx, nbr, d2, raw_cov):
        cfg = self.cfg
        n = len(cloud)
        if cfg.selector == "full":
            return np.arange(n)
        if cfg.selector == "learned":
            desc = descriptors_from_neighbors(cloud.xyz, cloud.intensity, nbr, d2, raw_cov)
            scores = scorer_forward(self.model, desc, cfg.alpha)
            # never spend budget on degenerate neighbourhoods
            combined = np.where(desc.degenerate, -1.0, scores.combined)
            return select_points(cloud, combined, cfg.budget)[1]
        if cfg.selector == "salient-unique-labels":
            sal, uni = self.labels.lookup(index, first_idx)
            return select_points(cloud, FeatureScores(sal, uni, cfg.alpha), cfg.budget)[1]
        if cfg.selector == "loam":
            return loam_budget_select(cloud, cfg.budget, cfg.loam_edge_fraction)[1]
        return random_baseline(cloud, cfg.budget, (cfg.seed, index))[1]

    # -- keyframes / submap ----------------------------------------------

    def maybe_add_keyframe(self, pose: SE3, cloud: PointCloud, covs, stamp: float) -> bool:
        if not needs_keyframe(self.keyframes, pose, self.cfg.keyframe_dist, self.cfg.keyframe_rot):
            return False
        kf = Keyframe(len(self.keyframes), pose, cloud, np.ascontiguousarray(covs), KdTree(cloud.xyz), stamp)
        self.keyframes.append(kf)
        self._submap_dirty = True
        return True

    def _ensure_submap(self, query: SE3):
        moved = (self.submap is None or np.linalg.norm(query.translation - self.submap.built_at)
                 > self.cfg.submap_rebuild_frac * self.cfg.keyframe_dist)
        if not (self._submap_dirty or moved):
            return
        ids = tuple(sorted(kf.id for kf in nearest_keyframes(self.keyframes, query.translation,
                                                              self.cfg.submap_k)))
        if self.submap is not None and ids == self.submap.keyframe_ids:
            self.submap.built_at = np.array(query.translation)
        else:
            self._submap_version += 1
            self.submap = rebuild_submap(self.keyframes, query, self.cfg.submap_k, self.gicp_cfg,
                                         self._submap_version)
        self._submap_dirty = False

    # -- main entry ----------------------------------------------------------

    def _motion(self, cloud: PointCloud, imu: Optional[ImuBuffer]):
        t_end = cloud.end_stamp
        st = self.state
        t0 = min(st.stamp, cloud.stamp)
        if imu is not None and len(imu) and imu.covers(t0, t_end):
            return integrate_imu(st, imu.window(t0, t_end), t0, t_end, self.cfg.gravity), False
        return _constant_velocity_motion(st, t0, t_end), True

    def process_scan(self, cloud: PointCloud, imu: Optional[ImuBuffer] = None,
                     index: Optional[int] = None):
        """Run one scan through the pipeline; returns (NavState, ScanStats)."""
        index = self._next_index if index is None else int(index)
        self._next_index = index + 1
        timer = _Timer()
        cfg = self.cfg
        t_end = cloud.end_stamp
        bootstrap = self.state is None

        if bootstrap:
            motion = MotionTrajectory([cloud.stamp, t_end] if t_end > cloud.stamp else [t_end],
                                      [SE3()] * (2 if t_end > cloud.stamp else 1))
            no_imu = False
        else:
            motion, no_imu = self._motion(cloud, imu)
        timer.lap("imu")

        body = deskew(cloud, motion)
        timer.lap("deskew")

        vox, first_idx = voxel_downsample(body, cfg.voxel, return_index=True)
        timer.lap("voxel")

        n_vox = len(vox)
        if n_vox == 0:
            raise LioSelectError(f"scan {index} is empty after preprocessing")
        _, nbr, d2, raw_cov = scan_neighborhoods(vox, cfg.descriptor_k)
        timer.lap("neighbors")

        sel = self._select(index, vox, first_idx, nbr, d2, raw_cov)
        selected = vox.subset(sel)
        covs, _ = regularize_covariances(raw_cov[sel], cfg.gicp_plane_epsilon)
        timer.lap("select")

        stats = ScanStats(index=index, stamp=t_end, n_raw=len(cloud), n_voxel=n_vox,
                          n_selected=len(sel), realized_budget=len(sel) / n_vox, bootstrap=bootstrap)

        if bootstrap:
            pose = SE3()
            velocity = np.zeros(3)
            timer.lap("submap")
            timer.lap("register")
        else:
            predicted = motion.pose_at(t_end)
            self._ensure_submap(predicted)
            timer.lap("submap")
            try:
                if len(selected) < 10:
                    raise InsufficientOverlapError(len(selected))
                res = gicp_align(selected.xyz, self.submap.target, predicted, self.gicp_cfg, covs)
                pose = res.pose
                stats.iterations = res.iterations
                stats.converged = res.converged
                stats.degenerate = res.degenerate
                stats.final_cost = float(res.final_cost)
            except InsufficientOverlapError as exc:
                log.warning("scan %d dropped: %s", index, exc)
                pose = predicted
                stats.dropped = True
            dt = t_end - self.state.stamp
            v_pred = motion.velocities[-1] if motion.velocities is not None else self.state.velocity
            if stats.dropped or dt <= 0.0:
                velocity = v_pred
            else:
                # finite difference of registered poses, referred to the scan end: the
                # IMU prediction carries the in-interval acceleration, the position
                # innovation over dt corrects its velocity
                velocity = v_pred + cfg.velocity_gain * (pose.translation - predicted.translation) / dt
            timer.lap("register")

        prev = self.state
        self.state = NavState(pose, velocity,
                              prev.gyro_bias if prev is not None else np.zeros(3),
                              prev.accel_bias if prev is not None else np.zeros(3), t_end)
        if not stats.dropped:
            stats.keyframe_added = self.maybe_add_keyframe(pose, selected, covs, t_end)
        stats.n_keyframes = len(self.keyframes)
        stats.map_points = int(sum(len(kf.cloud) for kf in self.keyframes))
        stats.map_bytes = map_memory_bytes(self.keyframes)
        timer.lap("keyframe")
        stats.stage_ms = {s: timer.ms.get(s, 0.0) for s in STAGES}
        if no_imu:
            log.debug("scan %d: IMU absent, constant-velocity prediction", index)
        return self.state, stats


def run_sequence(scans, imu: Optional[ImuBuffer], cfg: PipelineConfig = PipelineConfig(),
                 model: Optional[ScorerModel] = None, labels: Optional[LabelTable] = None):
    """Process every scan; returns (estimated Trajectory, RunStats)."""
    from .harness.trajectory import Trajectory

    odo = Odometry(cfg, model, labels)
    stats = RunStats()
    stamps, poses = [], []
    for i, cloud in enumerate(scans):
        state, row = odo.process_scan(cloud, imu, i)
        stamps.append(state.stamp)
        poses.append(state.pose)
        stats.rows.append(row)
    return Trajectory(stamps, poses), stats, odo
