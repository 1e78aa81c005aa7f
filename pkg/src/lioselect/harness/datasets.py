"""Dataset directories, label generation and scorer training drivers.

A dataset directory holds ``scans/*.dfsn``, ``imu.csv`` and, for simulated
data, ``gt.tum``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core import PointCloud
from ..errors import LioSelectError
from ..features.descriptors import descriptors_from_neighbors
from ..features.labels import UNIQUE_MAX_CURVATURE, label_salient, label_unique, unreliable_normals
from ..features.scorer import LabeledScan
from ..odometry import LabelTable, PipelineConfig, scan_neighborhoods
from ..preprocess import ImuBuffer, deskew, voxel_downsample
from . import io
from .config import SceneConfig
from .trajectory import Trajectory
from .world import (REALISTIC_RIG, SensorRig, SimulatedSequence, corridor_world, simulate,
                    straight_trajectory, three_plane_world, two_room_trajectory, two_room_world)

log = logging.getLogger(__name__)


def build_scene(scene: SceneConfig):
    """(world, ground-truth trajectory) for a scene description."""
    if scene.scene == "two-room":
        world = two_room_world(scene.world_seed, dynamic=scene.dynamic)
        gt = two_room_trajectory(scene.duration, reverse=scene.reverse, sway=scene.sway,
                                 phase=scene.sway_phase)
    elif scene.scene == "corridor":
        world = corridor_world(seed=scene.world_seed)
        ends = ((2.0, 0.0, 1.2), (28.0, 0.0, 1.2))
        gt = straight_trajectory(*(ends[::-1] if scene.reverse else ends), scene.duration)
    else:
        world = three_plane_world()
        ends = ((1.5, 1.5, 1.2), (4.0, 3.0, 1.2))
        gt = straight_trajectory(*(ends[::-1] if scene.reverse else ends), scene.duration)
    return world, gt


def simulate_scene(scene: SceneConfig = SceneConfig(), rig: Optional[SensorRig] = None,
                   seed: int = 0) -> SimulatedSequence:
    if rig is None:
        rig = REALISTIC_RIG if scene.realistic_noise else SensorRig()
    world, gt = build_scene(scene)
    return simulate(world, rig, gt, seed, scene.n_scans or None)


@dataclass
class Dataset:
    scans: List[PointCloud]
    imu: ImuBuffer
    gt: Optional[Trajectory] = None


def write_dataset(directory, scans: Sequence[PointCloud], imu: ImuBuffer,
                  gt: Optional[Trajectory] = None) -> Path:
    d = Path(directory)
    io.write_scans(d / "scans", scans)
    io.write_imu(d / "imu.csv", imu)
    if gt is not None:
        io.write_trajectory(d / "gt.tum", gt)
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise LioSelectError(f"dataset directory not found: {directory}")
    scans_dir = d / "scans" if (d / "scans").is_dir() else d
    imu = io.read_imu(d / "imu.csv") if (d / "imu.csv").is_file() else None
    if imu is None:
        raise LioSelectError(f"{directory}: missing imu.csv")
    gt = io.read_trajectory(d / "gt.tum") if (d / "gt.tum").is_file() else None
    return Dataset(io.read_scans(scans_dir), imu, gt)


# -- labels ------------------------------------------------------------------

@dataclass
class LabeledSequence:
    table: LabelTable
    scans: List[LabeledScan]

    def positive_rates(self) -> Tuple[float, float]:
        ys = np.concatenate([s.salient for s in self.scans])
        yu = np.concatenate([s.unique for s in self.scans])
        return float(ys.mean()), float(yu.mean())


def label_sequence(scans: Sequence[PointCloud], gt: Trajectory, cfg: PipelineConfig = PipelineConfig(),
                   window: int = 5, radius: float = 0.3, quorum: int = 3,
                   max_curvature: float = UNIQUE_MAX_CURVATURE, sequence_id: str = "") -> LabeledSequence:
    """Ground-truth-deskew, voxelize and label every scan.

    Points are identified by the raw index of their voxel's first member so
    the runtime (IMU-deskewed) voxelization can look them up.
    """
    bodies, first, descs = [], [], []
    for cloud in scans:
        body = deskew(cloud, gt.motion(cloud.stamp, cloud.end_stamp))
        vox, idx = voxel_downsample(body, cfg.voxel, return_index=True)
        _, nbr, d2, cov = scan_neighborhoods(vox, cfg.descriptor_k)
        bodies.append(vox)
        first.append(idx)
        descs.append(descriptors_from_neighbors(vox.xyz, vox.intensity, nbr, d2, cov))
    poses = [gt.pose_at(c.end_stamp) for c in scans]
    salient = label_salient(bodies, poses, window, radius, quorum)
    table = LabelTable()
    out = []
    for i, (vox, idx, desc, sal) in enumerate(zip(bodies, first, descs, salient)):
        # uniqueness is ranked among persistent points only, so the two labels
        # agree on a full budget of points instead of leaving the rest to ties
        excluded = unreliable_normals(desc, max_curvature) | ~sal
        if excluded.all():
            excluded = unreliable_normals(desc, max_curvature)
        uniq = label_unique(vox, desc.normals, cfg.budget, excluded).labels
        table.add(i, idx, sal, uniq)
        out.append(LabeledScan(desc.values, sal.astype(float), uniq.astype(float), sequence_id, i,
                               ~desc.degenerate))
    return LabeledSequence(table, out)


def labeled_from_table(scans: Sequence[PointCloud], table: LabelTable, cfg: PipelineConfig,
                       gt: Optional[Trajectory] = None, sequence_id: str = "") -> List[LabeledScan]:
    """Rebuild training rows from a label file; deskews with ``gt`` when given."""
    out = []
    for i, cloud in enumerate(scans):
        if i not in table:
            continue
        body = deskew(cloud, gt.motion(cloud.stamp, cloud.end_stamp)) if gt is not None else cloud
        vox, idx = voxel_downsample(body, cfg.voxel, return_index=True)
        _, nbr, d2, cov = scan_neighborhoods(vox, cfg.descriptor_k)
        desc = descriptors_from_neighbors(vox.xyz, vox.intensity, nbr, d2, cov)
        sal, uni = table.lookup(i, idx)
        out.append(LabeledScan(desc.values, sal, uni, sequence_id, i, ~desc.degenerate))
    return out
