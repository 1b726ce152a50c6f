"""Rigid-body transform algebra.

Conventions:
    - Rotations are proper 3x3 matrices (SO(3)); translations are 3-vectors
      in meters. A ``Transform`` is the usual homogeneous block [R t; 0 1].
    - ``a.compose(b)`` (or ``a @ b``) equals the homogeneous product a*b,
      i.e. b expressed in a's parent frame.
    - Angles are radians everywhere; degrees are accepted only at the CLI.

Values are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FractionOutOfRange, NonOrthonormalRotation

# Construction rejects matrices whose orthonormality drift exceeds this.
_REJECT_DRIFT = 1e-6
# Inputs inside the reject bound but above the storage bound are re-projected
# onto SO(3) via polar decomposition, so long composition chains stay exact.
_STORE_DRIFT = 1e-9


def _drift(m: np.ndarray) -> float:
    """Max-norm distance of m'm from the identity, plus determinant error."""
    err_orth = float(np.abs(m.T @ m - np.eye(3)).max())
    err_det = abs(float(np.linalg.det(m)) - 1.0)
    return max(err_orth, err_det)


def _project_to_so3(m: np.ndarray) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


class Rotation3:
    """A proper rotation matrix with enforced SO(3) invariants."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise NonOrthonormalRotation(f"expected 3x3 matrix, got {m.shape}")
        d = _drift(m)
        if d > _REJECT_DRIFT:
            raise NonOrthonormalRotation(f"orthonormality drift {d:.3e} exceeds {_REJECT_DRIFT:.0e}")
        if d > _STORE_DRIFT:
            m = _project_to_so3(m)
        m = np.array(m, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __setattr__(self, name, value):
        raise AttributeError("Rotation3 is immutable")

    @staticmethod
    def identity() -> "Rotation3":
        return Rotation3(np.eye(3))

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Rotation3":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise NonOrthonormalRotation("zero rotation axis")
        x, y, z = axis / n
        k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        m = np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)
        return Rotation3(m)

    def transpose(self) -> "Rotation3":
        return Rotation3(self.m.T)

    def angle_to(self, other: "Rotation3") -> float:
        """Geodesic angle between two rotations, in [0, pi]."""
        tr = float(np.trace(self.m.T @ other.m))
        return math.acos(min(1.0, max(-1.0, (tr - 1.0) / 2.0)))

    def __matmul__(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.m @ other.m)

    def __repr__(self):
        return f"Rotation3({self.m.tolist()})"


def rot_x(angle: float) -> Rotation3:
    return Rotation3.from_axis_angle((1.0, 0.0, 0.0), angle)


def rot_y(angle: float) -> Rotation3:
    return Rotation3.from_axis_angle((0.0, 1.0, 0.0), angle)


def rot_z(angle: float) -> Rotation3:
    return Rotation3.from_axis_angle((0.0, 0.0, 1.0), angle)


@dataclass(frozen=True)
class Transform:
    """Rigid pose: rotation plus translation (meters)."""

    rotation: Rotation3 = field(default_factory=Rotation3.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(np.asarray(self.translation, dtype=float).reshape(3))
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    def compose(self, other: "Transform") -> "Transform":
        r = self.rotation.m @ other.rotation.m
        t = self.rotation.m @ other.translation + self.translation
        return Transform(Rotation3(r), t)

    __matmul__ = compose

    def inverse(self) -> "Transform":
        rt = self.rotation.m.T
        return Transform(Rotation3(rt), -(rt @ self.translation))

    def apply(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float).reshape(3)
        return self.rotation.m @ p + self.translation

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.m
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "Transform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise NonOrthonormalRotation(f"expected 4x4 matrix, got {m.shape}")
        return Transform(Rotation3(m[:3, :3]), m[:3, 3])

    def to_flat(self) -> list[float]:
        """12 numbers: row-major rotation, then translation xyz."""
        return [float(v) for v in self.rotation.m.reshape(9)] + [float(v) for v in self.translation]

    @staticmethod
    def from_flat(values) -> "Transform":
        v = [float(x) for x in values]
        if len(v) != 12:
            raise NonOrthonormalRotation(f"expected 12 numbers, got {len(v)}")
        return Transform(Rotation3(np.array(v[:9]).reshape(3, 3)), np.array(v[9:]))

    def distance_to(self, other: "Transform") -> tuple[float, float]:
        """(translation error in meters, rotation error in radians)."""
        dt = float(np.linalg.norm(self.translation - other.translation))
        return dt, self.rotation.angle_to(other.rotation)

    def __repr__(self):
        t = ", ".join(f"{v:.6f}" for v in self.translation)
        return f"Transform(t=({t}))"


def compose(a: Transform, b: Transform) -> Transform:
    return a.compose(b)


def inverse(t: Transform) -> Transform:
    return t.inverse()


def from_rotation_translation(r: Rotation3, t) -> Transform:
    """Assemble the homogeneous block [R t; 0 1]."""
    if not isinstance(r, Rotation3):
        r = Rotation3(r)
    return Transform(r, np.asarray(t, dtype=float))


# --- quaternions (internal: only interpolation needs them) --------------------

def _quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _quat_slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = (1.0 - s) * q0 + s * q1
        return q / np.linalg.norm(q)
    theta = math.acos(min(1.0, dot))
    sin_theta = math.sin(theta)
    return (math.sin((1.0 - s) * theta) / sin_theta) * q0 + (math.sin(s * theta) / sin_theta) * q1


def interpolate(a: Transform, b: Transform, s: float) -> Transform:
    """Constant-speed pose interpolation: linear translation, geodesic rotation."""
    if not 0.0 <= s <= 1.0:
        raise FractionOutOfRange(f"fraction {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    t = (1.0 - s) * a.translation + s * b.translation
    q = _quat_slerp(_quat_from_matrix(a.rotation.m), _quat_from_matrix(b.rotation.m), s)
    return Transform(Rotation3(_quat_to_matrix(q)), t)


# --- seeded sampling helpers ---------------------------------------------------

def random_rotation(rng: np.random.Generator) -> Rotation3:
    """Uniform random rotation from a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    return Rotation3(_quat_to_matrix(q / np.linalg.norm(q)))


def random_transform(rng: np.random.Generator, translation_scale: float = 1.0) -> Transform:
    return Transform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, size=3))
