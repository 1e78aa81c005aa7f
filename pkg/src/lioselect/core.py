"""Points, clouds, rigid transforms and the small fixed-size linear algebra
everything else is built on.

Conventions, fixed once for the whole package:

* quaternions are ``(w, x, y, z)`` with the Hamilton product;
* an ``SE3`` named ``T_a_b`` maps coordinates in frame ``b`` into frame ``a``;
  ``a @ b`` applies ``b`` first, then ``a``;
* twists are 6-vectors ordered rotation first, ``[omega; v]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from . import _accel
from .errors import DegenerateRotationError, LioSelectError

_SMALL_ANGLE = 1e-5
# below this the Jacobian coefficients switch to their Taylor series
_SERIES_ANGLE = 1e-2


def _frozen(a, dtype=float, shape=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


# ---------------------------------------------------------------------------
#  quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_rot(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    cand = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    i = int(np.argmax(cand))
    if i == 0:
        s = math.sqrt(1.0 + tr) * 2.0
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif i == 1:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif i == 2:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_exp(omega):
    """Unit quaternion for the rotation vector ``omega`` (radians)."""
    omega = np.asarray(omega, dtype=float)
    theta = math.sqrt(float(omega @ omega))
    half = 0.5 * theta
    if theta < _SMALL_ANGLE:
        # sin(h)/theta = 1/2 - theta^2/48 + ...
        k = 0.5 - theta * theta / 48.0
        return np.array([math.cos(half), k * omega[0], k * omega[1], k * omega[2]])
    k = math.sin(half) / theta
    return np.array([math.cos(half), k * omega[0], k * omega[1], k * omega[2]])


def quat_log(q):
    """Rotation vector of a unit quaternion, angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = math.sqrt(float(v @ v))
    theta = 2.0 * math.atan2(s, q[0])
    if s < 1e-12:
        # theta/sin(theta/2) -> 2/w near zero
        return (2.0 / q[0]) * v
    return (theta / s) * v


def slerp(q0, q1, s):
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 0.9999995:
        q = q0 + s * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = math.acos(min(1.0, dot))
    sin_t = math.sin(theta)
    q = (math.sin((1.0 - s) * theta) * q0 + math.sin(s * theta) * q1) / sin_t
    return q / np.linalg.norm(q)


def so3_exp(omega):
    return quat_to_rot(quat_exp(omega))


def so3_log(R):
    return quat_log(rot_to_quat(R))


def _left_jacobian(omega):
    theta = math.sqrt(float(omega @ omega))
    K = skew(omega)
    t2 = theta * theta
    if theta < _SERIES_ANGLE:
        # Taylor forms; the closed forms lose digits to cancellation here
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = 2.0 * math.sin(0.5 * theta) ** 2 / t2
        b = (theta - math.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * K + b * K @ K


def _left_jacobian_inv(omega):
    theta = math.sqrt(float(omega @ omega))
    K = skew(omega)
    t2 = theta * theta
    if theta < _SERIES_ANGLE:
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        h = 0.5 * theta
        c = (1.0 - h * math.cos(h) / math.sin(h)) / t2
    return np.eye(3) - 0.5 * K + c * K @ K


# ---------------------------------------------------------------------------
#  SE(3)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SE3:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float).reshape(4)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise LioSelectError("SE3 with non-finite entries")
        nq = np.linalg.norm(q)
        if nq < 1e-12:
            raise LioSelectError("SE3 rotation quaternion has zero norm")
        # already-unit inputs keep their exact bits so file round trips are lossless
        if abs(nq - 1.0) > 4e-16:
            q = q / nq
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(rot_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rt(cls, R, t):
        return cls(rot_to_quat(R), t)

    @classmethod
    def exp(cls, twist):
        xi = np.asarray(twist, dtype=float).reshape(6)
        omega, v = xi[:3], xi[3:]
        return cls(quat_exp(omega), _left_jacobian(omega) @ v)

    def log(self):
        """Twist ``[omega; v]`` with ``SE3.exp(T.log()) == T``."""
        if self.angle() >= math.pi - 1e-6:
            raise DegenerateRotationError(f"rotation angle {self.angle():.9f} too close to pi for log")
        omega = quat_log(self.rotation)
        return np.concatenate([omega, _left_jacobian_inv(omega) @ self.translation])

    @cached_property
    def R(self):
        r = quat_to_rot(self.rotation)
        r.setflags(write=False)
        return r

    @property
    def t(self):
        return self.translation

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.translation
        return m

    def compose(self, other: SE3) -> SE3:
        return SE3(quat_mul(self.rotation, other.rotation), self.R @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> SE3:
        qi = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return SE3(qi, -(self.R.T @ self.translation))

    def apply(self, points):
        """Transform an (N, 3) array or a single 3-vector."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.translation

    def angle(self):
        q = self.rotation
        return 2.0 * math.atan2(math.sqrt(float(q[1:] @ q[1:])), abs(float(q[0])))

    def distance(self, other: SE3):
        """(translation distance, relative rotation angle)."""
        rel = self.inverse() @ other
        return float(np.linalg.norm(self.translation - other.translation)), rel.angle()

    def interpolate(self, other: SE3, s: float) -> SE3:
        """Slerp on rotation, linear on translation."""
        return SE3(slerp(self.rotation, other.rotation, s),
                   (1.0 - s) * self.translation + s * other.translation)

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"SE3(q=[{q}], t=[{t}])"


def se3_compose(a: SE3, b: SE3) -> SE3:
    return a @ b


def se3_exp(twist) -> SE3:
    return SE3.exp(twist)


def se3_log(T: SE3):
    return T.log()


@dataclass(frozen=True, eq=False)
class NavState:
    pose: SE3 = field(default_factory=SE3)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "velocity", _frozen(self.velocity, shape=(3,)))
        object.__setattr__(self, "gyro_bias", _frozen(self.gyro_bias, shape=(3,)))
        object.__setattr__(self, "accel_bias", _frozen(self.accel_bias, shape=(3,)))
        object.__setattr__(self, "stamp", float(self.stamp))


# ---------------------------------------------------------------------------
#  point clouds
# ---------------------------------------------------------------------------

class Point(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float
    t_offset: float
    ring: Optional[int]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Columnar point storage in acquisition order.

    ``xyz`` is in the sensor frame at each point's capture instant until the
    cloud has been deskewed. ``ring`` is ``None`` when the source carries no
    beam indices.
    """

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None
    t_offset: Optional[np.ndarray] = None
    ring: Optional[np.ndarray] = None
    stamp: float = 0.0
    scan_duration: float = 0.0

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=float, copy=True).reshape(-1, 3)
        n = xyz.shape[0]
        if not np.all(np.isfinite(xyz)):
            raise LioSelectError("point coordinates must be finite")
        inten = np.zeros(n) if self.intensity is None else np.array(self.intensity, dtype=float).reshape(n)
        toff = np.zeros(n) if self.t_offset is None else np.array(self.t_offset, dtype=float).reshape(n)
        dur = float(self.scan_duration)
        if dur < 0:
            raise LioSelectError("scan_duration must be >= 0")
        if n and (toff.min() < 0.0 or toff.max() > dur + 1e-9):
            raise LioSelectError("t_offset outside [0, scan_duration]")
        for name, arr in (("xyz", xyz), ("intensity", inten), ("t_offset", toff)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.ring is not None:
            ring = np.array(self.ring, dtype=np.int64).reshape(n)
            ring.setflags(write=False)
            object.__setattr__(self, "ring", ring)
        object.__setattr__(self, "stamp", float(self.stamp))
        object.__setattr__(self, "scan_duration", dur)

    def __len__(self):
        return self.xyz.shape[0]

    def __getitem__(self, i) -> Point:
        x, y, z = self.xyz[i]
        ring = None if self.ring is None else int(self.ring[i])
        return Point(float(x), float(y), float(z), float(self.intensity[i]), float(self.t_offset[i]), ring)

    @property
    def end_stamp(self):
        return self.stamp + self.scan_duration

    def subset(self, indices) -> PointCloud:
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.xyz[idx], self.intensity[idx], self.t_offset[idx],
            None if self.ring is None else self.ring[idx],
            self.stamp, self.scan_duration,
        )

    def transformed(self, T: SE3) -> PointCloud:
        return PointCloud(T.apply(self.xyz), self.intensity, self.t_offset, self.ring,
                          self.stamp, self.scan_duration)

    def with_points(self, xyz) -> PointCloud:
        return PointCloud(xyz, self.intensity, self.t_offset, self.ring, self.stamp, self.scan_duration)


# ---------------------------------------------------------------------------
#  fixed-size symmetric linear algebra
# ---------------------------------------------------------------------------

def sym3(m):
    """Symmetric 3x3 copy of ``m`` (average with its transpose)."""
    m = np.asarray(m, dtype=float).reshape(3, 3)
    return 0.5 * (m + m.T)


def sym_eigen3(m):
    """Eigenvalues (descending) and column eigenvectors of a symmetric 3x3."""
    a = sym3(m)
    if not np.all(np.isfinite(a)):
        raise LioSelectError("sym_eigen3 needs finite entries")
    vals, vecs = _accel.eigh3_batch(a.reshape(1, 3, 3))
    return vals[0], vecs[0]


def sym_eigen3_batch(mats):
    mats = np.ascontiguousarray(mats, dtype=float).reshape(-1, 3, 3)
    return _accel.eigh3_batch(mats)


def solve6(H, b):
    """Solve the 6x6 symmetric system ``H x = b``."""
    H = np.asarray(H, dtype=float).reshape(6, 6)
    return np.linalg.solve(0.5 * (H + H.T), np.asarray(b, dtype=float).reshape(6))
