"""Grasp candidate scoring and parallel-to-dexterous retargeting.

A candidate is scored against every other candidate by cosine similarity of
a fixed 13-channel geometric feature encoding; row sums of the resulting
correspondence matrix rank the candidates, and the winner is converted into
an arm flange pose through the camera / hand calibration chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCandidateSet, SceneFormatError, ZeroNormFeature
from .se3 import Rotation3, Transform, from_rotation_translation

# Widest opening of the hand between thumb and middle fingertip.
MAX_APERTURE = 0.12

# Per-channel standardization scales for the geometric encoder: grasp centers
# live within ~0.5 m of the camera, widths within ~0.1 m, so all 13 channels
# end up order-one.
TRANSLATION_SCALE = 0.5
WIDTH_SCALE = 0.1

FEATURE_DIM = 13


@dataclass(frozen=True)
class GraspProposal:
    """Parallel-gripper grasp hypothesis: center t (m), orientation R, width w (m)."""

    t: np.ndarray
    R: Rotation3
    w: float

    def __post_init__(self):
        t = np.array(np.asarray(self.t, dtype=float).reshape(3))
        t.setflags(write=False)
        object.__setattr__(self, "t", t)
        if not 0.0 <= self.w <= MAX_APERTURE:
            raise SceneFormatError(f"gripper width {self.w} outside [0, {MAX_APERTURE}]")

    def pose(self) -> Transform:
        return Transform(self.R, self.t)


@dataclass(frozen=True)
class CalibrationSet:
    """cam_in_base: camera frame in the robot base; hand_on_end: hand frame on the arm flange."""

    cam_in_base: Transform
    hand_on_end: Transform


def encode_features(g: GraspProposal) -> np.ndarray:
    """Deterministic 13-channel encoding: t/0.5, row-major R, w/0.1."""
    v = np.empty(FEATURE_DIM)
    v[:3] = g.t / TRANSLATION_SCALE
    v[3:12] = g.R.m.reshape(9)
    v[12] = g.w / WIDTH_SCALE
    return v


def similarity(p, q) -> float:
    """Cosine similarity of two feature vectors, in [-1, 1]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    np_ = float(np.linalg.norm(p))
    nq = float(np.linalg.norm(q))
    if np_ < 1e-12 or nq < 1e-12:
        raise ZeroNormFeature("cannot score a zero-norm feature vector")
    # Clamp the odd ulp of rounding excess so the documented [-1, 1] range holds.
    return min(1.0, max(-1.0, float(np.dot(p, q)) / (np_ * nq)))


def correspondence_matrix(features) -> np.ndarray:
    """Symmetric NxN cosine matrix with unit diagonal.

    Entries are computed pairwise (s[q][p] mirrors s[p][q]) so the matrix is
    exactly symmetric and replayable regardless of vector content.
    """
    n = len(features)
    s = np.ones((n, n))
    for p in range(n):
        for q in range(p + 1, n):
            s[p, q] = s[q, p] = similarity(features[p], features[q])
    return s


def select_from_features(features) -> tuple[int, list[float]]:
    """Row-sum confidences over the correspondence matrix; argmax wins.

    Ties break to the lowest index so replays are stable. Sums run
    left-to-right per row, matching a plain double-loop evaluation bit for
    bit.
    """
    if len(features) == 0:
        raise EmptyCandidateSet("no grasp candidates to select from")
    s = correspondence_matrix(features)
    confidences = [float(sum(row)) for row in s.tolist()]
    best = 0
    for j in range(1, len(confidences)):
        if confidences[j] > confidences[best]:
            best = j
    return best, confidences


def select_grasp(candidates) -> tuple[int, list[float]]:
    """Pick the most mutually-consistent candidate; returns (index, confidences)."""
    candidates = list(candidates)
    if not candidates:
        raise EmptyCandidateSet("no grasp candidates to select from")
    return select_from_features([encode_features(g) for g in candidates])


def retarget_to_end_effector(g: GraspProposal, calib: CalibrationSet) -> Transform:
    """Arm flange pose in the base frame for a camera-frame grasp proposal:
    cam_in_base * [R t; 0 1] * hand_on_end^-1."""
    hand_in_cam = from_rotation_translation(g.R, g.t)
    return calib.cam_in_base.compose(hand_in_cam).compose(calib.hand_on_end.inverse())


def solve_hand_on_end(b_e: Transform, b_h: Transform) -> Transform:
    """Hand-on-flange calibration from one simultaneous pose pair: b_e^-1 * b_h."""
    return b_e.inverse().compose(b_h)


# --- candidate-set serialization (one proposal per line: t xyz, R row-major, w)

def save_candidates(path, candidates) -> None:
    lines = []
    for g in candidates:
        fields = [*g.t.tolist(), *g.R.m.reshape(9).tolist(), g.w]
        lines.append(" ".join(repr(float(v)) for v in fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_candidates(path) -> list[GraspProposal]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        values = [float(tok) for tok in line.split()]
        if len(values) != FEATURE_DIM:
            raise SceneFormatError(f"{path}:{lineno}: expected 13 fields, got {len(values)}")
        out.append(
            GraspProposal(
                np.array(values[:3]),
                Rotation3(np.array(values[3:12]).reshape(3, 3)),
                values[12],
            )
        )
    return out
