"""Serial-chain kinematics: DH forward kinematics, damped-least-squares IK,
and orientation-constrained waypoint planning.

Joint configurations are plain length-N float arrays (radians). The hot paths
(IK, Jacobian) work on raw 4x4 arrays and only build ``Transform`` values at
the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import se3
from .errors import InvalidCount, JointLimitViolation, SceneFormatError, Unreachable
from .se3 import Rotation3, Transform

DEFAULT_JOINT_LIMIT = 2.0 * math.pi

# Damped least squares defaults: robust near singularities at the cost of a
# few extra iterations.
IK_DAMPING = 0.01
IK_STEP_CAP = 0.2
IK_MAX_ITERS = 100
# Convergence at the operation contract: 1e-4 m translation, 1e-3 rad rotation.
# Damping bias stalls a few micrometers short of anything much tighter when the
# wrist passes near a singularity.
IK_POS_TOL = 1e-4
IK_ROT_TOL = 1e-3

DEFAULT_WAYPOINT_COUNT = 20


@dataclass(frozen=True)
class DHRow:
    """One Denavit-Hartenberg row: link length a (m), twist alpha (rad),
    offset d (m), and a constant joint-angle offset (rad)."""

    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0

    def __post_init__(self):
        for name in ("a", "alpha", "d", "theta_offset"):
            if not math.isfinite(getattr(self, name)):
                raise SceneFormatError(f"non-finite DH field {name}")

    def matrix(self, q: float) -> np.ndarray:
        """Homogeneous transform Rz(theta) Tz(d) Tx(a) Rx(alpha)."""
        th = q + self.theta_offset
        ct, st = math.cos(th), math.sin(th)
        ca, sa = math.cos(self.alpha), math.sin(self.alpha)
        return np.array(
            [
                [ct, -st * ca, st * sa, self.a * ct],
                [st, ct * ca, -ct * sa, self.a * st],
                [0.0, sa, ca, self.d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class KinematicChain:
    rows: tuple[DHRow, ...]
    base: Transform = field(default_factory=Transform.identity)
    tool: Transform = field(default_factory=Transform.identity)
    limits: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        limits = tuple(self.limits) or tuple(
            (-DEFAULT_JOINT_LIMIT, DEFAULT_JOINT_LIMIT) for _ in self.rows
        )
        if len(limits) != len(self.rows):
            raise SceneFormatError("joint limit count does not match DH row count")
        object.__setattr__(self, "limits", limits)

    @property
    def dof(self) -> int:
        return len(self.rows)

    def check_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.dof:
            raise JointLimitViolation(f"expected {self.dof} joint angles, got {q.shape[0]}")
        for i, (lo, hi) in enumerate(self.limits):
            if not lo <= q[i] <= hi:
                raise JointLimitViolation(f"joint {i} angle {q[i]:.4f} outside [{lo:.4f}, {hi:.4f}]")
        return q

    def clip(self, q: np.ndarray) -> np.ndarray:
        lo = np.array([l for l, _ in self.limits])
        hi = np.array([h for _, h in self.limits])
        return np.clip(q, lo, hi)


def ur5_chain() -> KinematicChain:
    """The published UR5 DH table (meters, radians)."""
    half_pi = math.pi / 2.0
    rows = (
        DHRow(0.0, half_pi, 0.089159),
        DHRow(-0.425, 0.0, 0.0),
        DHRow(-0.39225, 0.0, 0.0),
        DHRow(0.0, half_pi, 0.10915),
        DHRow(0.0, -half_pi, 0.09465),
        DHRow(0.0, 0.0, 0.0823),
    )
    return KinematicChain(rows)


def _fk_joint_frames(chain: KinematicChain, q: np.ndarray) -> list[np.ndarray]:
    """Frames [base, base*A1, ..., base*A1..An] without the tool transform."""
    frames = [chain.base.to_matrix()]
    t = frames[0]
    for row, qi in zip(chain.rows, q):
        t = t @ row.matrix(float(qi))
        frames.append(t)
    return frames


def forward(chain: KinematicChain, q) -> Transform:
    """End-effector pose base * A1(q1) * ... * An(qn) * tool."""
    if chain.dof == 0:
        return chain.base.compose(chain.tool)
    q = chain.check_limits(q)
    m = _fk_joint_frames(chain, q)[-1] @ chain.tool.to_matrix()
    return Transform.from_matrix(m)


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric Jacobian (6 x dof): linear rows first, then angular rows,
    both expressed in the base frame at the tool point."""
    q = chain.check_limits(q)
    frames = _fk_joint_frames(chain, q)
    p_end = (frames[-1] @ chain.tool.to_matrix())[:3, 3]
    jac = np.zeros((6, chain.dof))
    for i in range(chain.dof):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        jac[:3, i] = np.cross(z, p_end - p)
        jac[3:, i] = z
    return jac


def rotation_error_vector(current: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Axis-angle vector of target * current^T (the so(3) log)."""
    r = target @ current.T
    cos_angle = min(1.0, max(-1.0, (float(np.trace(r)) - 1.0) / 2.0))
    angle = math.acos(cos_angle)
    if angle < 1e-12:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) * 0.5
    if math.pi - angle < 1e-6:
        # Near pi the skew part vanishes; recover the axis from the diagonal.
        axis = np.sqrt(np.maximum(np.diag(r) + 1.0, 0.0) / 2.0)
        k = int(np.argmax(axis))
        for j in range(3):
            if j != k and r[k, j] + r[j, k] < 0:
                axis[j] = -axis[j]
        return axis / np.linalg.norm(axis) * angle
    scale = angle / (2.0 * math.sin(angle))
    return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) * scale


def inverse(
    chain: KinematicChain,
    target: Transform,
    seed,
    max_iters: int = IK_MAX_ITERS,
    pos_tol: float = IK_POS_TOL,
    rot_tol: float = IK_ROT_TOL,
):
    """Damped-least-squares IK; returns the joint vector nearest the seed.

    Raises Unreachable when the iteration budget runs out before both
    tolerances are met.
    """
    q = chain.check_limits(seed).copy()
    target_m = target.to_matrix()
    lam2 = IK_DAMPING * IK_DAMPING
    eye6 = np.eye(6)
    for _ in range(max_iters):
        frames = _fk_joint_frames(chain, q)
        cur = frames[-1] @ chain.tool.to_matrix()
        e = np.empty(6)
        e[:3] = target_m[:3, 3] - cur[:3, 3]
        e[3:] = rotation_error_vector(cur[:3, :3], target_m[:3, :3])
        if np.linalg.norm(e[:3]) < pos_tol and np.linalg.norm(e[3:]) < rot_tol:
            return q
        p_end = cur[:3, 3]
        jac = np.zeros((6, chain.dof))
        for i in range(chain.dof):
            z = frames[i][:3, 2]
            jac[:3, i] = np.cross(z, p_end - frames[i][:3, 3])
            jac[3:, i] = z
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * eye6, e)
        step = float(np.abs(dq).max())
        if step > IK_STEP_CAP:
            dq *= IK_STEP_CAP / step
        q = chain.clip(q + dq)
    raise Unreachable(f"IK did not converge within {max_iters} iterations")


def plan_waypoints(start: Transform, goal: Transform, n: int = DEFAULT_WAYPOINT_COUNT) -> list[Transform]:
    """n poses from start to goal; translation linear, orientation on the
    constant-speed geodesic between the endpoint orientations."""
    if n < 2:
        raise InvalidCount(f"waypoint count {n} < 2")
    return [se3.interpolate(start, goal, i / (n - 1)) for i in range(n)]


def load_chain(path) -> KinematicChain:
    """Parse a chain description: one DH row per line (four decimal fields),
    optional per-joint ``limit lo hi`` lines, optional ``base``/``tool`` lines
    of 12 numbers."""
    rows: list[DHRow] = []
    limits: list[tuple[float, float]] = []
    base = Transform.identity()
    tool = Transform.identity()
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            if tokens[0] == "limit":
                limits.append((float(tokens[1]), float(tokens[2])))
            elif tokens[0] == "base":
                base = Transform.from_flat(tokens[1:13])
            elif tokens[0] == "tool":
                tool = Transform.from_flat(tokens[1:13])
            else:
                values = [float(t) for t in tokens]
                if len(values) != 4:
                    raise ValueError(f"expected 4 fields, got {len(values)}")
                rows.append(DHRow(*values))
        except (ValueError, IndexError) as exc:
            raise SceneFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise SceneFormatError(f"{path}: no DH rows found")
    return KinematicChain(tuple(rows), base=base, tool=tool, limits=tuple(limits))


def save_chain(chain: KinematicChain, path) -> None:
    lines = ["# DH table: a alpha d theta_offset"]
    for row in chain.rows:
        lines.append(f"{row.a!r} {row.alpha!r} {row.d!r} {row.theta_offset!r}")
    for lo, hi in chain.limits:
        lines.append(f"limit {lo!r} {hi!r}")
    if np.abs(chain.base.to_matrix() - np.eye(4)).max() > 0:
        lines.append("base " + " ".join(f"{v:.9f}" for v in chain.base.to_flat()))
    if np.abs(chain.tool.to_matrix() - np.eye(4)).max() > 0:
        lines.append("tool " + " ".join(f"{v:.9f}" for v in chain.tool.to_flat()))
    Path(path).write_text("\n".join(lines) + "\n")
