"""Numpy-backed value types passed between the simulation modules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ContractViolation


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ContractViolation(f"{name} must have 3 components, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class RigidTransform:
    """Pose of a child frame expressed in a parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(
            Rotation.from_rotvec(_vec3(rotvec, "rotvec")).as_matrix(),
            _vec3(translation, "translation"),
        )

    @classmethod
    def from_axis(cls, z_axis, position, roll: float = 0.0) -> "RigidTransform":
        """Frame whose +z points along ``z_axis``, rolled by ``roll`` radians about it."""
        z = _vec3(z_axis, "z_axis")
        z = z / np.linalg.norm(z)
        helper = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = np.cross(helper, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        base = np.column_stack([x, y, z])
        roll_m = Rotation.from_rotvec([0.0, 0.0, roll]).as_matrix()
        return cls(base @ roll_m, _vec3(position, "position"))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, child: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ child.rotation,
            self.rotation @ child.translation + self.translation,
        )


@dataclass(frozen=True)
class FingerState:
    """Joint angles of one finger; plane a bends about local y, plane b about local x."""

    angles_a: np.ndarray
    angles_b: np.ndarray
    base_pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        a = np.asarray(self.angles_a, dtype=float).reshape(-1)
        b = np.asarray(self.angles_b, dtype=float).reshape(-1)
        if a.shape != b.shape:
            raise ContractViolation("bending planes must have the same number of joints")
        object.__setattr__(self, "angles_a", a)
        object.__setattr__(self, "angles_b", b)

    @classmethod
    def straight(cls, n_links: int, base_pose: Optional[RigidTransform] = None) -> "FingerState":
        return cls(np.zeros(n_links), np.zeros(n_links), base_pose or RigidTransform.identity())

    @property
    def n_links(self) -> int:
        return self.angles_a.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.angles_a, self.angles_b])


@dataclass(frozen=True)
class FingerFrames:
    """Output of forward kinematics: joint/tip points and link orientations."""

    points: np.ndarray  # (n_links + 1, 3); points[0] is the base, points[-1] the tip
    rotations: np.ndarray  # (n_links, 3, 3)

    @property
    def tip(self) -> np.ndarray:
        return self.points[-1]


@dataclass(frozen=True)
class TendonState:
    tensions: np.ndarray  # (8,) N; [f0a+, f0a-, f0b+, f0b-, f1a+, f1a-, f1b+, f1b-]
    commands: np.ndarray  # (4,) m

    def pair(self, actuator: int) -> np.ndarray:
        return self.tensions[2 * actuator : 2 * actuator + 2]


@dataclass(frozen=True)
class ContactPoint:
    position: np.ndarray
    normal: np.ndarray  # unit, pointing into the head
    penetration: float
    force: np.ndarray  # force applied to the head
    finger: int = 0
    link: int = 0


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class HeadModel:
    center: np.ndarray
    radius: float
    h_hair: float
    k_hair: float
    k_scalp: float
    strand_anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if self.radius <= 0:
            raise ContractViolation("head radius must be positive")
        if self.h_hair < 0:
            raise ContractViolation("h_hair must be non-negative")

    @property
    def outer_radius(self) -> float:
        return self.radius + self.h_hair

    def moved(self, offset) -> "HeadModel":
        """Rigidly translate the head, anchors included."""
        delta = _vec3(offset, "offset")
        return HeadModel(
            self.center + delta,
            self.radius,
            self.h_hair,
            self.k_hair,
            self.k_scalp,
            self.strand_anchors + delta,
        )


@dataclass(frozen=True)
class DepthFrame:
    """Depth image in integer millimetres; 0 marks no valid return."""

    depth: np.ndarray
    masked: bool = False

    def __post_init__(self):
        arr = np.asarray(self.depth)
        if arr.ndim != 2:
            raise ContractViolation(f"depth frame must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "depth", arr.astype("<u2", copy=False))

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ContractViolation(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "bits", arr.astype(bool, copy=False))

    @property
    def shape(self):
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class ActuatorLoad:
    q: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.q, dtype=float).reshape(-1)
        if arr.shape != (4,):
            raise ContractViolation(f"actuator load must have 4 entries, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("actuator load must be finite")
        object.__setattr__(self, "q", arr)


@dataclass(frozen=True)
class Demonstration:
    times: np.ndarray
    points: np.ndarray  # (n, 3)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if t.shape[0] != p.shape[0]:
            raise ContractViolation("demonstration times and points differ in length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ContractViolation("demonstration times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if self.times.size else 0.0

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass(frozen=True)
class PoseObservation:
    """Head position offset as observed by the tracker, and the true one."""

    t: float
    tick: int
    observed: np.ndarray
    true: np.ndarray
