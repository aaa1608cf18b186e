"""Rigid poses and scripted rigid-body trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp


@dataclass(frozen=True)
class Pose:
    """Position (m) and unit quaternion in scalar-last ``(x, y, z, w)`` order."""

    position: tuple = (0.0, 0.0, 0.0)
    quat: tuple = (0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        q = np.asarray(self.quat, float)
        nq = np.linalg.norm(q)
        if not np.isfinite(nq) or abs(nq - 1.0) > 1e-6:
            raise ValueError(f"pose quaternion must be unit length, got {self.quat}")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "quat", tuple(float(v) for v in q / nq))

    @property
    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.quat)

    def matrix(self) -> np.ndarray:
        return self.rotation.as_matrix()

    def apply(self, pts) -> np.ndarray:
        return np.asarray(pts, float) @ self.matrix().T + np.asarray(self.position)

    def inverse_apply(self, pts) -> np.ndarray:
        return (np.asarray(pts, float) - np.asarray(self.position)) @ self.matrix()

    def interpolate(self, other: "Pose", s: float) -> "Pose":
        if s <= 0.0:
            return self
        if s >= 1.0:
            return other
        p = (1 - s) * np.asarray(self.position) + s * np.asarray(other.position)
        slerp = Slerp([0.0, 1.0], Rotation.from_quat([self.quat, other.quat]))
        return Pose(tuple(p), tuple(slerp([s]).as_quat()[0]))

    @classmethod
    def from_euler(cls, position, angles_deg=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(tuple(position), tuple(Rotation.from_euler("xyz", angles_deg, degrees=True).as_quat()))

    def to_dict(self) -> dict:
        return {"position": list(self.position), "quat": list(self.quat)}


def relative_velocity(a: Pose, b: Pose, dt: float):
    """Linear (m/s) and angular (rad/s) velocity taking pose ``a`` to ``b``."""
    lin = (np.asarray(b.position) - a.position) / dt
    rel = b.rotation * a.rotation.inv()
    return lin, rel.as_rotvec() / dt


@dataclass
class RigidScript:
    """Timestamped rigid target poses.

    The shell starts wherever the initial state puts it; each frame moves it
    to ``poses[i]``. The first ``n_preload`` frames set up contact and are
    not part of the recorded observation.
    """

    poses: list
    times: list
    n_preload: int = 0

    def __post_init__(self):
        if len(self.poses) != len(self.times):
            raise ValueError("poses and times differ in length")
        t = np.asarray(self.times, float)
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
            raise ValueError(f"timestamps must increase strictly (frame {bad})")
        if not 0 <= self.n_preload <= len(self.poses):
            raise ValueError("n_preload out of range")

    def __len__(self):
        return len(self.poses)

    def to_dict(self) -> dict:
        return {
            "n_preload": self.n_preload,
            "frames": [{"t": float(t), **p.to_dict()} for p, t in zip(self.poses, self.times)],
        }

    @classmethod
    def from_dict(cls, data: dict, length_scale: float = 1.0) -> "RigidScript":
        poses, times = [], []
        for fr in data["frames"]:
            pos = np.asarray(fr["position"], float) * length_scale
            quat = fr.get("quat")
            if quat is None:
                poses.append(Pose.from_euler(pos, fr.get("euler_deg", (0, 0, 0))))
            else:
                poses.append(Pose(tuple(pos), tuple(quat)))
            times.append(float(fr["t"]))
        return cls(poses, times, int(data.get("n_preload", 0)))
