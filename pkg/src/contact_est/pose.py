"""Rigid poses and the 6-dim tangent convention used for all derivatives.

A pose perturbation ``delta = (dt, dtheta)`` acts on the left, in world
coordinates::

    p' = p + dt
    R' = exp([dtheta]x) R

so a 3x6 derivative ``d point / d pose`` always has translation columns
first and rotation-vector columns second.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidArgumentError

QUAT_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, ``skew(a) @ b == cross(a, b)``."""
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _quat_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Position (m) and unit quaternion ``(w, x, y, z)``."""

    position: np.ndarray
    quaternion: np.ndarray
    rotation: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(q)):
            raise InvalidArgumentError("pose contains non-finite values")
        if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
            raise InvalidArgumentError(
                f"quaternion norm {np.linalg.norm(q):.12g} is not within {QUAT_TOL} of 1"
            )
        p.setflags(write=False)
        q.setflags(write=False)
        R = _quat_matrix(q)
        R.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_rotation(cls, position, rotation: Rotation) -> "Pose":
        q = rotation.as_quat(scalar_first=True)
        return cls(position, q / np.linalg.norm(q))

    @classmethod
    def from_matrix(cls, position, R) -> "Pose":
        return cls.from_rotation(position, Rotation.from_matrix(R))

    @classmethod
    def from_rotvec(cls, position, rotvec) -> "Pose":
        return cls.from_rotation(position, Rotation.from_rotvec(rotvec))

    @classmethod
    def from_axis_angle(cls, position, axis, angle: float) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        return cls.from_rotvec(position, axis / np.linalg.norm(axis) * angle)

    def as_rotation(self) -> Rotation:
        return Rotation.from_quat(self.quaternion, scalar_first=True)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: express ``other`` (given in this frame) in the parent frame."""
        R = self.as_rotation() * other.as_rotation()
        return Pose.from_rotation(self.position + self.rotation @ other.position, R)

    def inverse(self) -> "Pose":
        Rinv = self.as_rotation().inv()
        return Pose.from_rotation(-(self.rotation.T @ self.position), Rinv)

    def transform_point(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.position

    def perturb(self, delta) -> "Pose":
        """Apply a left tangent perturbation ``(dt, dtheta)``."""
        delta = np.asarray(delta, dtype=float)
        R = Rotation.from_rotvec(delta[3:]) * self.as_rotation()
        return Pose.from_rotation(self.position + delta[:3], R)

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "quaternion": [float(v) for v in self.quaternion],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        if "quaternion" in data:
            q = np.asarray(data["quaternion"], dtype=float)
            # tolerate hand-written files with a few digits of precision
            if abs(np.linalg.norm(q) - 1.0) < 1e-6:
                q = q / np.linalg.norm(q)
            return cls(data.get("position", [0.0, 0.0, 0.0]), q)
        if "rotvec" in data:
            return cls.from_rotvec(data.get("position", [0.0, 0.0, 0.0]), data["rotvec"])
        return cls(data.get("position", [0.0, 0.0, 0.0]), [1.0, 0.0, 0.0, 0.0])


def pose_difference(a: Pose, b: Pose) -> np.ndarray:
    """Tangent ``delta`` with ``b.perturb(delta) == a``."""
    drot = (a.as_rotation() * b.as_rotation().inv()).as_rotvec()
    return np.concatenate([a.position - b.position, drot])


def random_pose(rng: np.random.Generator, center=(0.0, 0.0, 0.0), radius: float = 1.0) -> Pose:
    """Uniform orientation, position uniform in a ball around ``center``."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    r = radius * rng.uniform() ** (1.0 / 3.0)
    rot = Rotation.random(random_state=rng)
    return Pose.from_rotation(np.asarray(center, dtype=float) + r * direction, rot)
