"""IMU propagation, motion-distortion correction and voxel filtering."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .core import SE3, NavState, PointCloud, quat_exp, quat_mul, quat_to_rot
from .errors import (LioSelectError, MalformedBufferError, MissingImuError,
                     TrajectoryCoverageError)

log = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_IMU_GAP = 0.020
MAX_GYRO = 35.0
MAX_ACCEL = 200.0
MAX_STEP_ROTATION = 0.5
_STAMP_TOL = 1e-9


@dataclass(frozen=True)
class ImuSample:
    stamp: float
    gyro: tuple
    accel: tuple


class ImuBuffer:
    """Columnar IMU samples with strictly increasing stamps.

    Samples outside the sanity bounds (|gyro| < 35 rad/s, |accel| < 200 m/s^2)
    are dropped at construction.
    """

    def __init__(self, stamps, gyro, accel):
        stamps = np.asarray(stamps, dtype=float).reshape(-1)
        gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        if not (len(stamps) == len(gyro) == len(accel)):
            raise MalformedBufferError("IMU columns have different lengths")
        sane = (np.all(np.isfinite(gyro), axis=1) & np.all(np.isfinite(accel), axis=1)
                & (np.linalg.norm(gyro, axis=1) < MAX_GYRO) & (np.linalg.norm(accel, axis=1) < MAX_ACCEL))
        if not sane.all():
            log.warning("dropping %d IMU samples outside sanity bounds", int((~sane).sum()))
        stamps, gyro, accel = stamps[sane], gyro[sane], accel[sane]
        if len(stamps) > 1 and np.any(np.diff(stamps) <= 0.0):
            raise MalformedBufferError("IMU stamps must be strictly increasing")
        self.stamps = stamps
        self.gyro = gyro
        self.accel = accel

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]):
        if not samples:
            return cls(np.empty(0), np.empty((0, 3)), np.empty((0, 3)))
        return cls([s.stamp for s in samples], [s.gyro for s in samples], [s.accel for s in samples])

    def __len__(self):
        return len(self.stamps)

    def __getitem__(self, i):
        return ImuSample(float(self.stamps[i]), tuple(self.gyro[i]), tuple(self.accel[i]))

    def window(self, t0, t1):
        """Samples with t0 - gap <= stamp <= t1 + gap, as a new buffer."""
        lo = np.searchsorted(self.stamps, t0 - MAX_IMU_GAP, side="left")
        hi = np.searchsorted(self.stamps, t1 + MAX_IMU_GAP, side="right")
        # keep one sample either side so interpolation can bracket the ends
        lo = max(0, lo - 1)
        hi = min(len(self.stamps), hi + 1)
        out = ImuBuffer.__new__(ImuBuffer)
        out.stamps, out.gyro, out.accel = self.stamps[lo:hi], self.gyro[lo:hi], self.accel[lo:hi]
        return out

    def covers(self, t0, t1):
        try:
            self._check_coverage(t0, t1)
        except MissingImuError:
            return False
        return True

    def _check_coverage(self, t0, t1):
        s = self.stamps
        if len(s) == 0:
            raise MissingImuError(f"no IMU samples for [{t0:.6f}, {t1:.6f}]")
        if s[0] > t0 + MAX_IMU_GAP or s[-1] < t1 - MAX_IMU_GAP:
            raise MissingImuError(
                f"IMU covers [{s[0]:.6f}, {s[-1]:.6f}], scan needs [{t0:.6f}, {t1:.6f}]")
        inside = s[(s >= t0) & (s <= t1)]
        edges = np.concatenate([[max(t0, s[0])], inside, [min(t1, s[-1])]])
        if len(edges) > 1 and np.max(np.diff(edges)) > MAX_IMU_GAP + _STAMP_TOL:
            raise MissingImuError(f"IMU gap > {MAX_IMU_GAP * 1e3:.0f} ms inside [{t0:.6f}, {t1:.6f}]")

    def interpolate(self, t):
        """Linearly interpolated (gyro, accel) at time(s) t, held at the ends."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        g = np.stack([np.interp(t, self.stamps, self.gyro[:, j]) for j in range(3)], axis=1)
        a = np.stack([np.interp(t, self.stamps, self.accel[:, j]) for j in range(3)], axis=1)
        return g, a


class MotionTrajectory:
    """Time-stamped poses covering one interval; slerp/lerp between samples."""

    def __init__(self, stamps, poses: Sequence[SE3], velocities=None):
        stamps = np.asarray(stamps, dtype=float).reshape(-1)
        if len(stamps) != len(poses) or len(stamps) == 0:
            raise LioSelectError("trajectory needs matching, non-empty stamps and poses")
        if len(stamps) > 1 and np.any(np.diff(stamps) <= 0.0):
            raise MalformedBufferError("trajectory stamps must be strictly increasing")
        self.stamps = stamps
        self.poses = list(poses)
        self.quats = np.array([p.rotation for p in poses])
        self.trans = np.array([p.translation for p in poses])
        self.velocities = None if velocities is None else np.asarray(velocities, dtype=float)
        if len(poses) > 1:
            dots = np.abs(np.einsum("ij,ij->i", self.quats[1:], self.quats[:-1]))
            steps = 2.0 * np.arccos(np.clip(dots, -1.0, 1.0))
            if np.any(steps >= MAX_STEP_ROTATION):
                raise TrajectoryCoverageError(
                    f"consecutive trajectory rotation {steps.max():.3f} rad exceeds {MAX_STEP_ROTATION}")

    @property
    def start(self):
        return float(self.stamps[0])

    @property
    def end(self):
        return float(self.stamps[-1])

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < self.start - _STAMP_TOL or t.max() > self.end + _STAMP_TOL):
            raise TrajectoryCoverageError(
                f"query [{t.min():.6f}, {t.max():.6f}] outside trajectory [{self.start:.6f}, {self.end:.6f}]")

    def pose_at(self, t) -> SE3:
        self._check(t)
        if len(self.stamps) == 1:
            return self.poses[0]
        i = int(np.clip(np.searchsorted(self.stamps, t, side="right") - 1, 0, len(self.stamps) - 2))
        s = (t - self.stamps[i]) / (self.stamps[i + 1] - self.stamps[i])
        s = min(1.0, max(0.0, s))
        return self.poses[i].interpolate(self.poses[i + 1], s)

    def qt_at(self, times):
        """Quaternions (M, 4) and translations (M, 3) at many times."""
        times = np.asarray(times, dtype=float).reshape(-1)
        self._check(times)
        if len(self.stamps) == 1:
            return (np.broadcast_to(self.quats[0], (len(times), 4)).copy(),
                    np.broadcast_to(self.trans[0], (len(times), 3)).copy())
        i = np.clip(np.searchsorted(self.stamps, times, side="right") - 1, 0, len(self.stamps) - 2)
        s = np.clip((times - self.stamps[i]) / (self.stamps[i + 1] - self.stamps[i]), 0.0, 1.0)
        q = _slerp_many(self.quats[i], self.quats[i + 1], s)
        # a + s (b - a) is exact when a == b, so a resting segment interpolates bit-exactly
        t = self.trans[i] + s[:, None] * (self.trans[i + 1] - self.trans[i])
        return q, t

    def rt_at(self, times):
        """Rotation matrices (M, 3, 3) and translations (M, 3) at many times."""
        q, t = self.qt_at(times)
        return _quat_to_rot_many(q), t


def _slerp_many(q0, q1, s):
    dot = np.einsum("ij,ij->i", q0, q1)
    q1 = np.where(dot[:, None] < 0, -q1, q1)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    small = dot > 0.9999995
    sin_t = np.where(small, 1.0, np.sin(theta))
    w0 = np.sin((1.0 - s) * theta) / sin_t
    w1 = np.sin(s * theta) / sin_t
    q = np.where(small[:, None], q0 + s[:, None] * (q1 - q0), w0[:, None] * q0 + w1[:, None] * q1)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    # same idempotent rule as SE3: leave already-unit quaternions bit-exact
    return np.where(np.abs(norm - 1.0) > 4e-16, q / norm, q)


def _quat_to_rot_many(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def integrate_imu(state0: NavState, imu: ImuBuffer, t0: float, t1: float,
                  gravity=GRAVITY) -> MotionTrajectory:
    """Propagate ``state0`` through the IMU samples over [t0, t1].

    Rotation uses the quaternion exponential of the bias-corrected mean gyro
    rate on each interval; velocity and position are integrated with the
    trapezoidal rule on gravity-compensated world-frame acceleration.
    """
    if not t1 > t0:
        raise LioSelectError(f"integrate_imu needs t1 > t0 (got {t0}, {t1})")
    if len(imu.stamps) > 1 and np.any(np.diff(imu.stamps) <= 0.0):
        raise MalformedBufferError("IMU stamps must be strictly increasing")
    imu._check_coverage(t0, t1)
    gravity = np.asarray(gravity, dtype=float)
    inner = imu.stamps[(imu.stamps > t0) & (imu.stamps < t1)]
    times = np.concatenate([[t0], inner, [t1]])
    gyro, acc = imu.interpolate(times)
    gyro = gyro - state0.gyro_bias
    acc = acc - state0.accel_bias

    q = state0.pose.rotation.copy()
    p = state0.pose.translation.copy()
    v = state0.velocity.copy()
    a_prev = quat_to_rot(q) @ acc[0] + gravity
    poses = [state0.pose]
    vels = [v.copy()]
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        w = 0.5 * (gyro[k] + gyro[k + 1])
        q = quat_mul(q, quat_exp(w * dt))
        q /= np.linalg.norm(q)
        a_next = quat_to_rot(q) @ acc[k + 1] + gravity
        v_next = v + 0.5 * (a_prev + a_next) * dt
        p = p + 0.5 * (v + v_next) * dt
        v = v_next
        a_prev = a_next
        poses.append(SE3(q, p))
        vels.append(v.copy())
    return MotionTrajectory(times, poses, np.array(vels))


def deskew(cloud: PointCloud, traj: MotionTrajectory) -> PointCloud:
    """Re-express every point in the body frame at the scan end time."""
    n = len(cloud)
    t_end = cloud.end_stamp
    if n == 0:
        return PointCloud(cloud.xyz, cloud.intensity, cloud.t_offset, cloud.ring,
                          cloud.stamp, cloud.scan_duration)
    uniq, inv = np.unique(cloud.t_offset, return_inverse=True)
    q, t = traj.qt_at(cloud.stamp + uniq)
    q_end, t_w_end = traj.qt_at([t_end])
    R_end = _quat_to_rot_many(q_end)[0]
    # fold T_end^-1 into the per-time transforms
    R_rel = np.einsum("ji,njk->nik", R_end, _quat_to_rot_many(q))
    t_rel = (t - t_w_end) @ R_end
    # instants sharing the end pose exactly map through the identity
    same = np.all(q == q_end, axis=1) & np.all(t == t_w_end, axis=1)
    R_rel[same] = np.eye(3)
    t_rel[same] = 0.0
    inv = inv.reshape(-1)
    out = np.einsum("nij,nj->ni", R_rel[inv], cloud.xyz) + t_rel[inv]
    return PointCloud(out, cloud.intensity, np.full(n, cloud.scan_duration), cloud.ring,
                      cloud.stamp, cloud.scan_duration)


@dataclass(frozen=True)
class VoxelConfig:
    leaf: float = 0.25
    reduce_mode: str = "centroid"

    def __post_init__(self):
        if not self.leaf > 0:
            raise LioSelectError(f"voxel leaf must be > 0, got {self.leaf}")
        if self.reduce_mode not in ("centroid", "first"):
            raise LioSelectError(f"reduce_mode must be 'centroid' or 'first', got {self.reduce_mode!r}")


def voxel_downsample(cloud: PointCloud, cfg: VoxelConfig = VoxelConfig(), return_index=False):
    """One point per occupied voxel, ordered by each voxel's first member.

    With ``return_index`` the index (into ``cloud``) of each voxel's first
    member is returned alongside the filtered cloud.
    """
    if len(cloud) == 0:
        out = cloud.subset(np.empty(0, dtype=np.int64))
        return (out, np.empty(0, dtype=np.int64)) if return_index else out
    first, _, centroid, mean_i = _accel.voxel_reduce(
        np.ascontiguousarray(cloud.xyz), np.ascontiguousarray(cloud.intensity), float(cfg.leaf))
    if cfg.reduce_mode == "first":
        out = cloud.subset(first)
    else:
        out = PointCloud(centroid, mean_i, cloud.t_offset[first],
                         None if cloud.ring is None else cloud.ring[first],
                         cloud.stamp, cloud.scan_duration)
    return (out, first) if return_index else out
