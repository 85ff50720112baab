"""
Shared value types: rigid poses and wrenches
"""
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

Z_AXIS = np.array([0.0, 0.0, 1.0])

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world_point = rotation.apply(local_point) + position"""
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: Rotation = field(default_factory=Rotation.identity)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rotvec(cls, position: ArrayLike, rotvec: ArrayLike = (0.0, 0.0, 0.0)) -> "Pose":
        return cls(np.asarray(position, dtype=float), Rotation.from_rotvec(np.asarray(rotvec, dtype=float)))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.rotation.apply(points) + self.position

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        return self.rotation.inv().apply(np.asarray(points) - self.position)

    @property
    def axis(self) -> np.ndarray:
        """Local +z expressed in the world"""
        return self.rotation.apply(Z_AXIS)

    @property
    def tilt(self) -> float:
        """Angle between local +z and world +z"""
        return float(np.arccos(np.clip(self.axis[2], -1.0, 1.0)))

    @property
    def tilt_vector(self) -> np.ndarray:
        """Rotation vector that takes world +z onto the local axis"""
        axis = self.axis
        swing = np.cross(Z_AXIS, axis)
        norm = np.linalg.norm(swing)
        if norm < 1e-12:
            return np.zeros(3)
        return swing / norm * np.arctan2(norm, axis[2])

    @property
    def yaw(self) -> float:
        """Twist angle about world z (swing-twist decomposition)"""
        x, y, z, w = self.rotation.as_quat()
        return wrap_angle(2.0 * np.arctan2(z, w))

    def with_position(self, position: ArrayLike) -> "Pose":
        return Pose(np.asarray(position, dtype=float), self.rotation)


@dataclass(frozen=True)
class Wrench:
    """Force (N) and torque (N m) pair"""
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float).reshape(3))
        object.__setattr__(self, "torque", np.asarray(self.torque, dtype=float).reshape(3))

    @classmethod
    def zero(cls) -> "Wrench":
        return cls()

    @classmethod
    def from_array(cls, values: ArrayLike) -> "Wrench":
        values = np.asarray(values, dtype=float)
        return cls(values[:3], values[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


def wrap_angle(angle: float) -> float:
    """Wrap to [-pi, pi)"""
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)
