"""Synthetic planar worlds, a spinning-LiDAR + IMU simulator, and the stock
scenes and trajectories used by the tests and the acceptance runs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple

import numpy as np

from .. import _accel
from ..core import SE3, PointCloud, quat_log, quat_mul
from ..errors import LioSelectError
from ..preprocess import GRAVITY, ImuBuffer
from .trajectory import Trajectory


@dataclass(frozen=True)
class Patch:
    corner: Tuple[float, float, float]
    edge1: Tuple[float, float, float]
    edge2: Tuple[float, float, float]
    reflectivity: float = 0.5


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float]      # at t = 0
    velocity: Tuple[float, float, float]
    radius: float
    reflectivity: float = 0.8


@dataclass
class SyntheticWorld:
    patches: List[Patch] = field(default_factory=list)
    spheres: List[Sphere] = field(default_factory=list)

    def add_rect(self, corner, edge1, edge2, reflectivity=0.5):
        e1 = np.asarray(edge1, dtype=float)
        e2 = np.asarray(edge2, dtype=float)
        if np.linalg.norm(np.cross(e1, e2)) < 1e-9 * max(1.0, np.linalg.norm(e1) * np.linalg.norm(e2)):
            raise LioSelectError("patch edge vectors must be linearly independent")
        self.patches.append(Patch(tuple(map(float, corner)), tuple(e1), tuple(e2), float(reflectivity)))
        return self

    def add_box(self, center, size, yaw=0.0, reflectivity=0.6):
        """Closed axis-aligned-in-z box, optionally yawed; ``center`` is the
        centre of the bottom face."""
        cx, cy, cz = center
        sx, sy, sz = size
        c, s = math.cos(yaw), math.sin(yaw)
        ax = np.array([c, s, 0.0]) * sx
        ay = np.array([-s, c, 0.0]) * sy
        az = np.array([0.0, 0.0, sz])
        o = np.array([cx, cy, cz]) - 0.5 * ax - 0.5 * ay
        self.add_rect(o, ax, az, reflectivity)
        self.add_rect(o + ay, ax, az, reflectivity)
        self.add_rect(o, ay, az, reflectivity)
        self.add_rect(o + ax, ay, az, reflectivity)
        self.add_rect(o + az, ax, ay, reflectivity)
        return self

    def add_sphere(self, center, velocity, radius, reflectivity=0.8):
        self.spheres.append(Sphere(tuple(map(float, center)), tuple(map(float, velocity)),
                                   float(radius), float(reflectivity)))
        return self

    def arrays(self):
        corners = np.array([p.corner for p in self.patches], dtype=float).reshape(-1, 3)
        e1 = np.array([p.edge1 for p in self.patches], dtype=float).reshape(-1, 3)
        e2 = np.array([p.edge2 for p in self.patches], dtype=float).reshape(-1, 3)
        normals = np.cross(e1, e2)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        g11 = np.einsum("ij,ij->i", e1, e1)
        g12 = np.einsum("ij,ij->i", e1, e2)
        g22 = np.einsum("ij,ij->i", e2, e2)
        det = g11 * g22 - g12 * g12
        gram_inv = np.stack([np.stack([g22, -g12], -1), np.stack([-g12, g11], -1)], 1) / det[:, None, None]
        sc = np.array([s.center for s in self.spheres], dtype=float).reshape(-1, 3)
        sv = np.array([s.velocity for s in self.spheres], dtype=float).reshape(-1, 3)
        sr = np.array([s.radius for s in self.spheres], dtype=float).reshape(-1)
        refl = np.array([p.reflectivity for p in self.patches] + [s.reflectivity for s in self.spheres])
        return dict(corners=corners, e1=e1, e2=e2, normals=normals, gram_inv=gram_inv,
                    sph_c0=sc, sph_v=sv, sph_r=sr, reflectivity=refl)


@dataclass(frozen=True)
class SensorRig:
    beams: int = 16
    azimuth_steps: int = 1800
    fov_down: float = -15.0        # degrees
    fov_up: float = 15.0
    scan_rate: float = 20.0        # Hz
    range_noise: float = 0.0       # m, 1-sigma
    min_range: float = 0.3
    max_range: float = 60.0
    imu_rate: float = 200.0        # Hz
    gyro_noise_density: float = 0.0   # rad/s/sqrt(Hz)
    accel_noise_density: float = 0.0  # m/s^2/sqrt(Hz)

    def __post_init__(self):
        if self.beams < 1 or self.azimuth_steps < 1:
            raise LioSelectError("beams and azimuth_steps must be >= 1")
        if not (self.scan_rate > 0 and self.imu_rate > 0):
            raise LioSelectError("scan_rate and imu_rate must be > 0")
        for f in ("range_noise", "gyro_noise_density", "accel_noise_density"):
            if getattr(self, f) < 0:
                raise LioSelectError(f"{f} must be >= 0")

    @property
    def period(self):
        return 1.0 / self.scan_rate

    def elevations(self):
        if self.beams == 1:
            return np.radians(np.array([0.5 * (self.fov_down + self.fov_up)]))
        return np.radians(np.linspace(self.fov_down, self.fov_up, self.beams))

    def beam_directions(self):
        """Unit directions (azimuth_steps, beams, 3) in the sensor frame."""
        az = 2.0 * np.pi * np.arange(self.azimuth_steps) / self.azimuth_steps
        el = self.elevations()
        ce, se = np.cos(el), np.sin(el)
        d = np.empty((self.azimuth_steps, self.beams, 3))
        d[:, :, 0] = np.cos(az)[:, None] * ce[None, :]
        d[:, :, 1] = np.sin(az)[:, None] * ce[None, :]
        d[:, :, 2] = se[None, :]
        return d


RIG_FIELDS = tuple(f.name for f in fields(SensorRig))

REALISTIC_RIG = SensorRig(range_noise=0.01, gyro_noise_density=1e-3, accel_noise_density=1e-2)


@dataclass
class SimulatedSequence:
    scans: List[PointCloud]
    imu: ImuBuffer
    gt: Trajectory
    hit_ids: List[np.ndarray] = field(default_factory=list)


def cast_scan(world: SyntheticWorld, rig: SensorRig, gt: Trajectory, stamp: float,
              rng: Optional[np.random.Generator] = None, arrays=None, directions=None):
    """Ray-cast one sweep starting at ``stamp``. Each azimuth column fires at
    its own instant from the interpolated ground-truth pose, so the returned
    cloud carries real motion distortion. Returns (cloud, hit ids)."""
    arrays = arrays or world.arrays()
    dirs_s = rig.beam_directions() if directions is None else directions
    steps, beams = rig.azimuth_steps, rig.beams
    period = rig.period
    col_t = np.arange(steps) * (period / steps)
    R, t = gt.motion(stamp, stamp + period).rt_at(stamp + col_t)
    dirs_w = np.einsum("cij,cbj->cbi", R, dirs_s).reshape(-1, 3)
    origins = np.repeat(t, beams, axis=0)
    times = np.repeat(stamp + col_t, beams)
    rng_hit, hit = _accel.raycast(
        np.ascontiguousarray(origins), np.ascontiguousarray(dirs_w), times,
        arrays["corners"], arrays["e1"], arrays["e2"], arrays["normals"], arrays["gram_inv"],
        arrays["sph_c0"], arrays["sph_v"], arrays["sph_r"], float(rig.max_range))
    ok = (hit >= 0) & (rng_hit >= rig.min_range)
    r = rng_hit[ok]
    if rig.range_noise > 0.0 and rng is not None:
        r = r + rng.normal(0.0, rig.range_noise, size=r.shape)
    d_s = dirs_s.reshape(-1, 3)[ok]
    xyz = d_s * r[:, None]
    hid = hit[ok]
    # incidence-dependent return strength
    npatch = arrays["corners"].shape[0]
    n_w = np.empty((len(hid), 3))
    is_patch = hid < npatch
    n_w[is_patch] = arrays["normals"][hid[is_patch]]
    if (~is_patch).any():
        s = hid[~is_patch] - npatch
        hit_pt = origins[ok][~is_patch] + dirs_w[ok][~is_patch] * rng_hit[ok][~is_patch, None]
        centre = arrays["sph_c0"][s] + times[ok][~is_patch, None] * arrays["sph_v"][s]
        n_w[~is_patch] = (hit_pt - centre) / arrays["sph_r"][s, None]
    cos_inc = np.abs(np.einsum("ij,ij->i", n_w, dirs_w[ok]))
    intensity = np.clip(np.round(255.0 * arrays["reflectivity"][hid] * (0.3 + 0.7 * cos_inc)), 0, 255)
    toff = np.repeat(col_t, beams)[ok]
    ring = np.tile(np.arange(beams), steps)[ok]
    cloud = PointCloud(xyz, intensity, toff, ring, stamp, period)
    return cloud, hid


def imu_from_trajectory(gt: Trajectory, rig: SensorRig, rng: Optional[np.random.Generator] = None,
                        gravity=GRAVITY) -> ImuBuffer:
    """Body-frame gyro and specific force by central differences over the
    ground-truth rows (which should be sampled at the IMU rate)."""
    n = len(gt)
    if n < 3:
        raise LioSelectError("need at least 3 trajectory rows to derive IMU samples")
    st = gt.stamps
    q = gt.quaternions()
    p = gt.translations()
    gyro = np.zeros((n, 3))
    acc = np.zeros((n, 3))
    for i in range(1, n - 1):
        h0 = st[i] - st[i - 1]
        h1 = st[i + 1] - st[i]
        qi_inv = q[i - 1] * np.array([1.0, -1.0, -1.0, -1.0])
        gyro[i] = quat_log(quat_mul(qi_inv, q[i + 1])) / (h0 + h1)
        a_w = 2.0 * ((p[i + 1] - p[i]) / h1 - (p[i] - p[i - 1]) / h0) / (h0 + h1)
        acc[i] = gt.poses[i].R.T @ (a_w - np.asarray(gravity))
    gyro[0], gyro[-1] = gyro[1], gyro[-2]
    acc[0], acc[-1] = acc[1], acc[-2]
    if rng is not None:
        if rig.gyro_noise_density > 0:
            gyro = gyro + rng.normal(0.0, rig.gyro_noise_density * math.sqrt(rig.imu_rate), gyro.shape)
        if rig.accel_noise_density > 0:
            acc = acc + rng.normal(0.0, rig.accel_noise_density * math.sqrt(rig.imu_rate), acc.shape)
    return ImuBuffer(st, gyro, acc)


def simulate(world: SyntheticWorld, rig: SensorRig, gt: Trajectory, seed: int = 0,
             n_scans: Optional[int] = None) -> SimulatedSequence:
    """Scans, IMU samples and the ground truth for one pass along ``gt``.

    Scan k starts at gt.start + k / scan_rate; a ray that hits nothing within
    ``max_range`` is dropped.
    """
    period = rig.period
    available = int(math.floor((gt.end - gt.start) / period + 1e-9))
    if available < 1:
        raise LioSelectError("trajectory must span at least one scan period")
    n_scans = available if n_scans is None else min(n_scans, available)
    rng = np.random.default_rng(seed)
    arrays = world.arrays()
    directions = rig.beam_directions()
    scans, hits = [], []
    for k in range(n_scans):
        cloud, hid = cast_scan(world, rig, gt, gt.start + k * period, rng, arrays, directions)
        scans.append(cloud)
        hits.append(hid)
    imu = imu_from_trajectory(gt, rig, rng)
    return SimulatedSequence(scans, imu, gt, hits)


# ---------------------------------------------------------------------------
#  stock scenes
# ---------------------------------------------------------------------------

def _wall(world, x0, y0, x1, y1, height, refl=0.5):
    world.add_rect((x0, y0, 0.0), (x1 - x0, y1 - y0, 0.0), (0.0, 0.0, height), refl)


def two_room_world(seed: int = 0, height: float = 3.0, dynamic: bool = True) -> SyntheticWorld:
    """20 m x 10 m: room A (x 0-8), a 2 m wide corridor (x 8-12, y 4-6) and
    room B (x 12-20), with seeded box obstacles and moving spheres."""
    rng = np.random.default_rng(seed)
    w = SyntheticWorld()
    w.add_rect((0.0, 0.0, 0.0), (20.0, 0.0, 0.0), (0.0, 10.0, 0.0), 0.3)
    w.add_rect((0.0, 0.0, height), (20.0, 0.0, 0.0), (0.0, 10.0, 0.0), 0.4)
    _wall(w, 0, 0, 0, 10, height)
    _wall(w, 0, 0, 8, 0, height)
    _wall(w, 0, 10, 8, 10, height)
    _wall(w, 8, 0, 8, 4, height)
    _wall(w, 8, 6, 8, 10, height)
    _wall(w, 8, 4, 12, 4, height, 0.55)
    _wall(w, 8, 6, 12, 6, height, 0.55)
    _wall(w, 12, 0, 12, 4, height)
    _wall(w, 12, 6, 12, 10, height)
    _wall(w, 20, 0, 20, 10, height)
    _wall(w, 12, 0, 20, 0, height)
    _wall(w, 12, 10, 20, 10, height)
    # a door-frame pillar in the corridor breaks its translational symmetry
    w.add_box((10.0, 4.15, 0.0), (0.3, 0.3, height), 0.0, 0.6)
    for x_lo, x_hi in ((0.8, 7.2), (12.8, 19.2)):
        for band in ((0.8, 3.2), (6.8, 9.2)):
            for _ in range(2):
                cx = rng.uniform(x_lo, x_hi)
                cy = rng.uniform(*band)
                size = (rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.5, 1.8))
                w.add_box((cx, cy, 0.0), size, rng.uniform(-0.6, 0.6), rng.uniform(0.4, 0.9))
    if dynamic:
        for x, t_cross, direction in ((5.5, 1.5, 1.0), (3.5, 2.8, -1.0), (15.5, 7.0, 1.0), (17.5, 8.2, -1.0)):
            speed = 4.0 * direction
            y0 = 5.0 - speed * t_cross
            w.add_sphere((x + rng.uniform(-0.3, 0.3), y0, 1.0), (0.0, speed, 0.0), 0.4, 0.85)
    return w


def corridor_world(length: float = 30.0, width: float = 2.0, height: float = 2.5,
                   seed: int = 0) -> SyntheticWorld:
    """Long, nearly featureless corridor along +x with a few shallow niches."""
    rng = np.random.default_rng(seed)
    w = SyntheticWorld()
    hw = 0.5 * width
    w.add_rect((0.0, -hw, 0.0), (length, 0.0, 0.0), (0.0, width, 0.0), 0.3)
    w.add_rect((0.0, -hw, height), (length, 0.0, 0.0), (0.0, width, 0.0), 0.4)
    w.add_rect((0.0, -hw, 0.0), (length, 0.0, 0.0), (0.0, 0.0, height), 0.5)
    w.add_rect((0.0, hw, 0.0), (length, 0.0, 0.0), (0.0, 0.0, height), 0.5)
    w.add_rect((0.0, -hw, 0.0), (0.0, width, 0.0), (0.0, 0.0, height), 0.5)
    w.add_rect((length, -hw, 0.0), (0.0, width, 0.0), (0.0, 0.0, height), 0.5)
    for x in rng.uniform(2.0, length - 2.0, size=4):
        side = rng.choice([-1.0, 1.0])
        w.add_box((x, side * (hw - 0.1), 0.0), (0.25, 0.2, height), 0.0, 0.6)
    return w


def three_plane_world(size: float = 6.0, height: float = 3.0) -> SyntheticWorld:
    w = SyntheticWorld()
    w.add_rect((0.0, 0.0, 0.0), (size, 0.0, 0.0), (0.0, size, 0.0), 0.3)
    w.add_rect((0.0, 0.0, 0.0), (0.0, size, 0.0), (0.0, 0.0, height), 0.5)
    w.add_rect((0.0, 0.0, 0.0), (size, 0.0, 0.0), (0.0, 0.0, height), 0.5)
    return w


def _rpy_quat(roll, pitch, yaw):
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def two_room_trajectory(duration: float = 10.0, rate: float = 200.0, reverse: bool = False,
                        sway: float = 0.5, sway_wavelength: float = 7.0, phase: float = 0.0,
                        height: float = 1.2) -> Trajectory:
    """Room A -> corridor -> room B (or back), starting and ending at rest.

    Roll and pitch are zero at t = 0 so the first body frame is gravity
    aligned.
    """
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    tau = t / duration
    length = 14.0
    s = length * (tau - np.sin(2.0 * np.pi * tau) / (2.0 * np.pi))
    x = 2.0 + s if not reverse else 18.0 - s
    k = 2.0 * np.pi / sway_wavelength
    y = 5.0 + sway * np.sin(k * s + phase)
    dyds = sway * k * np.cos(k * s + phase)
    heading = 0.0 if not reverse else np.pi
    yaw = heading + 0.5 * np.arctan(dyds if not reverse else -dyds) + 0.15 * np.sin(2.0 * np.pi * 0.3 * t)
    roll = 0.03 * np.sin(2.0 * np.pi * 0.7 * t)
    pitch = 0.02 * np.sin(2.0 * np.pi * 0.5 * t)
    z = height + 0.05 * np.sin(2.0 * np.pi * 0.4 * t)
    poses = [SE3(_rpy_quat(roll[i], pitch[i], yaw[i]), (x[i], y[i], z[i])) for i in range(n)]
    return Trajectory(t, poses)


def straight_trajectory(start, end, duration: float, rate: float = 200.0, yaw: float = 0.0) -> Trajectory:
    """Constant-heading traverse with a smooth rest-to-rest speed profile."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    tau = t / duration
    s = tau - np.sin(2.0 * np.pi * tau) / (2.0 * np.pi)
    q = _rpy_quat(0.0, 0.0, yaw)
    poses = [SE3(q, start + si * (end - start)) for si in s]
    return Trajectory(t, poses)


def stationary_trajectory(pose: SE3, duration: float, rate: float = 200.0) -> Trajectory:
    n = int(round(duration * rate)) + 1
    return Trajectory(np.arange(n) / rate, [pose] * n)
