"""Stamped pose sequences."""
from __future__ import annotations

from typing import Iterable, List, Sequence, Tuple

import numpy as np

from ..core import SE3
from ..errors import LioSelectError
from ..preprocess import MotionTrajectory


class Trajectory:
    """Ordered (stamp, SE3) rows with strictly increasing stamps."""

    def __init__(self, stamps: Sequence[float], poses: Sequence[SE3]):
        stamps = np.asarray(stamps, dtype=float).reshape(-1)
        if len(stamps) != len(poses):
            raise LioSelectError("trajectory needs one pose per stamp")
        if len(stamps) > 1 and np.any(np.diff(stamps) <= 0.0):
            raise LioSelectError("trajectory stamps must be strictly increasing")
        self.stamps = stamps
        self.poses: List[SE3] = list(poses)

    @classmethod
    def from_rows(cls, rows: Iterable[Tuple[float, SE3]]):
        rows = list(rows)
        return cls([r[0] for r in rows], [r[1] for r in rows])

    def __len__(self):
        return len(self.stamps)

    def __iter__(self):
        return iter(zip(self.stamps.tolist(), self.poses))

    def __getitem__(self, i):
        return float(self.stamps[i]), self.poses[i]

    @property
    def start(self):
        return float(self.stamps[0])

    @property
    def end(self):
        return float(self.stamps[-1])

    def translations(self):
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def quaternions(self):
        return np.array([p.rotation for p in self.poses]).reshape(-1, 4)

    def transformed(self, G: SE3) -> Trajectory:
        """Left-multiply every pose by ``G`` (change of world frame)."""
        return Trajectory(self.stamps, [G @ p for p in self.poses])

    def motion(self, t0=None, t1=None) -> MotionTrajectory:
        """Interpolating view over [t0, t1] (default: everything)."""
        t0 = self.start if t0 is None else t0
        t1 = self.end if t1 is None else t1
        lo = max(0, int(np.searchsorted(self.stamps, t0, side="right")) - 1)
        hi = min(len(self.stamps), int(np.searchsorted(self.stamps, t1, side="left")) + 1)
        return MotionTrajectory(self.stamps[lo:hi], self.poses[lo:hi])

    def pose_at(self, t) -> SE3:
        return self.motion(t, t).pose_at(t)
