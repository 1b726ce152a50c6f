"""Typed, versioned slot store shared by the skills.

Seven slots carry the perception and control state a task needs: the
language query, the RGB and depth frames, the segmentation mask, the grasp
set, the force bound, and the motion vector. Every write bumps a per-slot
version and records the timestep; snapshots are immutable views used for
recovery prompts and replay digests.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, TypeMismatch, UnknownSlot
from .grasp import GraspProposal

# Force bound applied when a plan omits f_max (newtons).
DEFAULT_F_MAX = 10.0

# Simulator frames default to 160x120 (width x height).
DEFAULT_RESOLUTION = (160, 120)


class _Empty:
    """Sentinel for never-written slots."""

    def __repr__(self):
        return "Empty"

    def __bool__(self):
        return False


EMPTY = _Empty()


@dataclass(frozen=True)
class MotionVector:
    """Geometric motion parameters: pull distance d (m), twist angle theta
    (rad), radius r (m)."""

    d: float = 0.0
    theta: float = 0.0
    r: float = 0.0


@dataclass(frozen=True)
class GraspSet:
    """Scored candidate set plus the selected index; source_id names the
    simulated entity the candidates were proposed on."""

    proposals: tuple[GraspProposal, ...]
    selected: int
    confidences: tuple[float, ...]
    source_id: str = ""

    def best(self) -> GraspProposal:
        return self.proposals[self.selected]


def _check_image(name, value, kind):
    if not isinstance(value, np.ndarray):
        raise TypeMismatch(f"{name} expects an array, got {type(value).__name__}")
    if kind == "rgb":
        if value.ndim != 3 or value.shape[2] != 3 or value.dtype != np.uint8:
            raise TypeMismatch(f"{name} expects HxWx3 uint8, got {value.shape} {value.dtype}")
    elif kind == "depth":
        if value.ndim != 2 or value.dtype != np.float64:
            raise TypeMismatch(f"{name} expects HxW float64 meters, got {value.shape} {value.dtype}")
    elif kind == "mask":
        if value.ndim != 2 or value.dtype != np.bool_:
            raise TypeMismatch(f"{name} expects HxW bool, got {value.shape} {value.dtype}")
    return value


def _check_lang(name, value):
    if not isinstance(value, str) or not value:
        raise TypeMismatch(f"{name} expects a nonempty string")
    return value


def _check_f_max(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeMismatch(f"{name} expects a number")
    if not value > 0:
        raise TypeMismatch(f"{name} must be positive, got {value}")
    return float(value)


def _check_grasps(name, value):
    if not isinstance(value, GraspSet):
        raise TypeMismatch(f"{name} expects a GraspSet")
    if not 0 <= value.selected < len(value.proposals):
        raise TypeMismatch(f"{name} selected index {value.selected} out of range")
    return value


def _check_motion(name, value):
    if not isinstance(value, MotionVector):
        raise TypeMismatch(f"{name} expects a MotionVector")
    return value


_VALIDATORS = {
    "lang_query": _check_lang,
    "rgb": lambda n, v: _check_image(n, v, "rgb"),
    "depth": lambda n, v: _check_image(n, v, "depth"),
    "mask": lambda n, v: _check_image(n, v, "mask"),
    "grasps": _check_grasps,
    "f_max": _check_f_max,
    "motion_vec": _check_motion,
}

SLOTS = tuple(_VALIDATORS)

_IMAGE_SLOTS = ("rgb", "depth", "mask")


def content_digest(value) -> str:
    """Stable sha256 of a slot value's canonical bytes."""
    h = hashlib.sha256()
    if value is EMPTY:
        h.update(b"empty")
    elif isinstance(value, str):
        h.update(b"str:" + value.encode("utf-8"))
    elif isinstance(value, float):
        h.update(b"float:" + repr(value).encode())
    elif isinstance(value, np.ndarray):
        h.update(f"array:{value.dtype}:{value.shape}:".encode())
        h.update(np.ascontiguousarray(value).tobytes())
    elif isinstance(value, MotionVector):
        h.update(f"motion:{value.d!r},{value.theta!r},{value.r!r}".encode())
    elif isinstance(value, GraspSet):
        h.update(f"grasps:{value.selected}:{value.source_id}:".encode())
        for g in value.proposals:
            h.update(" ".join(repr(float(v)) for v in [*g.t, *g.R.m.reshape(9), g.w]).encode())
            h.update(b";")
        h.update(",".join(repr(float(c)) for c in value.confidences).encode())
    else:
        raise TypeMismatch(f"cannot digest {type(value).__name__}")
    return h.hexdigest()


@dataclass(frozen=True)
class Snapshot:
    """Immutable view of the board at a timestep; later writes never alter it."""

    tau: int
    values: dict
    versions: dict
    slot_tau: dict

    def read(self, slot: str):
        if slot not in _VALIDATORS:
            raise UnknownSlot(slot)
        return self.values[slot]

    def records(self) -> list[str]:
        lines = []
        for slot in SLOTS:
            lines.append(
                f"{slot} version={self.versions[slot]} tau={self.slot_tau[slot]} "
                f"digest={content_digest(self.values[slot])}"
            )
        return lines

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"tau={self.tau}\n".encode())
        for line in self.records():
            h.update(line.encode() + b"\n")
        return h.hexdigest()

    def save(self, directory) -> Path:
        """Write the record file plus digest-named binary sidecars for images."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for slot in _IMAGE_SLOTS:
            value = self.values[slot]
            if value is not EMPTY:
                (directory / f"{content_digest(value)}.bin").write_bytes(
                    np.ascontiguousarray(value).tobytes()
                )
        path = directory / f"snapshot_{self.tau:05d}.txt"
        path.write_text(f"tau={self.tau}\n" + "\n".join(self.records()) + "\n")
        return path


class Blackboard:
    """Single-writer, multi-reader slot store with monotone per-slot versions."""

    def __init__(self):
        self._values = {slot: EMPTY for slot in SLOTS}
        self._versions = {slot: 0 for slot in SLOTS}
        self._slot_tau = {slot: -1 for slot in SLOTS}
        self.tau = 0

    def advance_tau(self) -> int:
        self.tau += 1
        return self.tau

    def write(self, slot: str, value) -> int:
        if slot not in _VALIDATORS:
            raise UnknownSlot(slot)
        value = _VALIDATORS[slot](slot, value)
        if slot in _IMAGE_SLOTS:
            shape = value.shape[:2]
            for other in _IMAGE_SLOTS:
                if other == slot:
                    continue
                existing = self._values[other]
                if existing is not EMPTY and existing.shape[:2] != shape:
                    raise DimensionMismatch(
                        f"{slot} is {shape}, {other} is {existing.shape[:2]}"
                    )
            value = value.copy()
            value.setflags(write=False)
        self._values[slot] = value
        self._versions[slot] += 1
        self._slot_tau[slot] = self.tau
        return self._versions[slot]

    def read(self, slot: str):
        if slot not in _VALIDATORS:
            raise UnknownSlot(slot)
        return self._values[slot]

    def version(self, slot: str) -> int:
        if slot not in _VALIDATORS:
            raise UnknownSlot(slot)
        return self._versions[slot]

    def versions(self) -> dict:
        return dict(self._versions)

    def snapshot(self) -> Snapshot:
        return Snapshot(
            tau=self.tau,
            values=dict(self._values),
            versions=dict(self._versions),
            slot_tau=dict(self._slot_tau),
        )
