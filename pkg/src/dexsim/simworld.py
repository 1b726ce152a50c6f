"""Seeded synthetic tabletop world.

A scene is a set of primitive objects (boxes, spheres, cylinders,
star-prisms) and containers (drawer, lidded box, basket, bowl) on a table
plane. Rendering is a deterministic orthographic top-down rasterization:
per pixel the highest surface wins, which also yields an ownership map that
drives the segmentation oracle. Physics is kinematic only: rigid attachment
while held, containment, drawer sliding, and the two injected failure modes
(grasp slip, target displacement).

All state changes go through ``step``, which returns a new world; the random
stream is a counted seed sequence so trajectories replay exactly.
"""

from __future__ import annotations

import copy
import math
import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    AmbiguousQuery,
    ConfigError,
    DimensionMismatch,
    EmptyMask,
    InvalidEffect,
    NoFeasibleGrasp,
    SceneFormatError,
)
from .grasp import MAX_APERTURE, CalibrationSet, GraspProposal
from .se3 import Rotation3, Transform, rot_x

# Camera window: 160x120 px at 5 mm/px covers x in [0.15, 0.95], y in [-0.3, 0.3].
WIDTH, HEIGHT = 160, 120
PIXEL_SIZE = 0.005
VIEW_X0, VIEW_Y0 = 0.15, -0.30
CAMERA_HEIGHT = 1.0

TAU_D_DEFAULT = 0.5
SCORE_EXACT = 0.9
SCORE_ADJECTIVE = 0.8

# A grasp closes successfully when the hand center is within this of the
# target center; displaced targets beyond it read as an empty hand.
CAPTURE_RADIUS = 0.005

DEPTH_DELTA = 0.005
DRAWER_STROKE = 0.30
TRAY_FLOOR = 0.03
CONTAINER_FLOOR = 0.01
WALL_THICKNESS = 0.012
LID_THICKNESS = 0.015
HANDLE_RADIUS = 0.012
HANDLE_LENGTH = 0.08
KNOB_HEIGHT = 0.05

# Finger reading while holding: 1 - 0.8*w/aperture, so a full-aperture object
# still reads 0.2 and an empty snap reads exactly 1.0 (fully closed).
HOLDING_BAND = (0.15, 0.9)

STOPWORDS = {"the", "a", "an", "of", "in", "on", "at"}
SIZE_SMALL = {"smaller", "smallest", "small"}
SIZE_BIG = {"bigger", "biggest", "larger", "largest", "big"}
POSITION_MIDDLE = {"middle", "center"}
COLOR_WORDS = {
    "red", "green", "yellow", "blue", "orange", "purple",
    "white", "black", "brown", "pink", "gray",
}

PALETTE = {
    "red": (200, 40, 40),
    "green": (60, 170, 60),
    "yellow": (220, 200, 60),
    "blue": (50, 90, 200),
    "orange": (230, 140, 40),
    "purple": (140, 60, 180),
    "white": (235, 235, 235),
    "black": (30, 30, 30),
    "brown": (130, 90, 50),
    "pink": (230, 150, 170),
    "gray": (128, 128, 128),
    "wood": (170, 130, 80),
}
TABLE_COLOR = (90, 90, 95)

SHAPES = ("box", "sphere", "cylinder", "star-prism")
CONTAINER_KINDS = ("drawer", "lidded-box", "basket", "bowl")

STAR_INNER_RATIO = 0.4


@dataclass
class FailureProfile:
    slip_prob: float = 0.0
    perturb_prob: float = 0.0
    perturb_sigma: float = 0.05

    def __post_init__(self):
        for name in ("slip_prob", "perturb_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SceneFormatError(f"{name}={v} outside [0, 1]")


@dataclass
class SceneObject:
    id: str
    labels: tuple[str, ...]
    shape: str
    pose: Transform
    size: np.ndarray
    color: str = "gray"
    inside: str | None = None
    surface: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SceneFormatError(f"unknown shape {self.shape!r}")
        if not self.labels:
            raise SceneFormatError(f"object {self.id} has no labels")
        self.size = np.asarray(self.size, dtype=float).reshape(3)
        if not (self.size > 0).all():
            raise SceneFormatError(f"object {self.id} size must be positive")


@dataclass
class Container:
    id: str
    kind: str
    labels: tuple[str, ...]
    pose: Transform
    size: np.ndarray
    color: str = "wood"
    open_fraction: float = 0.0
    lid_pose: Transform | None = None

    def __post_init__(self):
        if self.kind not in CONTAINER_KINDS:
            raise SceneFormatError(f"unknown container kind {self.kind!r}")
        self.size = np.asarray(self.size, dtype=float).reshape(3)
        if not 0.0 <= self.open_fraction <= 1.0:
            raise SceneFormatError(f"open_fraction {self.open_fraction} outside [0, 1]")
        if self.kind == "lidded-box" and self.lid_pose is None:
            cx, cy, _ = self.pose.translation
            self.lid_pose = Transform(
                Rotation3.identity(), (cx, cy, self.size[2] + LID_THICKNESS / 2)
            )

    @property
    def lid_present(self) -> bool:
        """True while the lid still covers the box mouth."""
        if self.kind != "lidded-box" or self.lid_pose is None:
            return False
        d = self.lid_pose.translation[:2] - self.pose.translation[:2]
        return float(np.hypot(*d)) < min(self.size[0], self.size[1]) / 4

    @property
    def handle_pose(self) -> Transform:
        if self.kind == "drawer":
            cx, cy, _ = self.pose.translation
            x = cx + self.size[0] / 2 + self.open_fraction * DRAWER_STROKE + 0.02
            return Transform(Rotation3.identity(), (x, cy, 0.6 * self.size[2]))
        if self.kind == "lidded-box" and self.lid_pose is not None:
            lx, ly, lz = self.lid_pose.translation
            return Transform(
                Rotation3.identity(),
                (lx, ly, lz + LID_THICKNESS / 2 + KNOB_HEIGHT / 2),
            )
        return self.pose


@dataclass
class HandState:
    finger_positions: np.ndarray = field(default_factory=lambda: np.zeros(6))
    holding: str | None = None
    hold_offset: Transform | None = None


def default_calibration() -> CalibrationSet:
    """Fixed overhead camera looking down, hand 12 cm past the arm flange."""
    cam = Transform(rot_x(math.pi), (VIEW_X0 + WIDTH * PIXEL_SIZE / 2, 0.0, CAMERA_HEIGHT))
    hand_on_end = Transform(Rotation3.identity(), (0.0, 0.0, 0.12))
    return CalibrationSet(cam, hand_on_end)


@dataclass
class WorldState:
    objects: dict[str, SceneObject]
    containers: dict[str, Container]
    end_effector_pose: Transform
    arm_config: np.ndarray
    hand: HandState
    failure: FailureProfile
    rng_seed: int
    rng_count: int = 0
    calibration: CalibrationSet = field(default_factory=default_calibration)
    last_injections: tuple[str, ...] = ()

    def clone(self) -> "WorldState":
        return copy.deepcopy(self)

    def entity_ids(self) -> list[str]:
        ids = list(self.objects)
        for c in self.containers.values():
            ids.append(c.id)
            if c.kind == "drawer":
                ids += [f"{c.id}.tray", f"{c.id}.handle"]
            elif c.kind == "lidded-box":
                ids += [f"{c.id}.lid", f"{c.id}.lid_handle"]
        return ids

    def entity_pose(self, entity_id: str) -> Transform:
        if entity_id in self.objects:
            return self.objects[entity_id].pose
        base, _, part = entity_id.partition(".")
        c = self.containers[base]
        if part == "handle" or part == "lid_handle":
            return c.handle_pose
        if part == "lid":
            return c.lid_pose
        if part == "tray":
            cx, cy, _ = c.pose.translation
            x0 = cx + c.size[0] / 2
            return Transform(
                Rotation3.identity(),
                (x0 + c.open_fraction * DRAWER_STROKE / 2, cy, TRAY_FLOOR),
            )
        return c.pose

    def entity_position(self, entity_id: str) -> np.ndarray:
        return self.entity_pose(entity_id).translation


# --- skill effects -------------------------------------------------------------

@dataclass(frozen=True)
class MoveEffect:
    pose: Transform
    arm_config: np.ndarray | None = None


@dataclass(frozen=True)
class GraspEffect:
    entity_id: str
    hand_pose: Transform
    width: float


@dataclass(frozen=True)
class ReleaseEffect:
    pass


@dataclass(frozen=True)
class RotateEffect:
    theta: float


@dataclass(frozen=True)
class PullEffect:
    d: float = 0.0
    theta: float = 0.0
    r: float = 0.0


# --- rendering -------------------------------------------------------------------

_COLS, _ROWS = np.meshgrid(np.arange(WIDTH), np.arange(HEIGHT))
_PX = VIEW_X0 + (_COLS + 0.5) * PIXEL_SIZE
_PY = VIEW_Y0 + (_ROWS + 0.5) * PIXEL_SIZE


@dataclass
class Frame:
    rgb: np.ndarray
    depth: np.ndarray
    owner: np.ndarray
    entity_index: dict[str, int]


def _disc(cx, cy, radius):
    return (_PX - cx) ** 2 + (_PY - cy) ** 2 <= radius * radius


def _rect(cx, cy, hx, hy, yaw=0.0):
    dx = _PX - cx
    dy = _PY - cy
    if yaw:
        c, s = math.cos(-yaw), math.sin(-yaw)
        dx, dy = c * dx - s * dy, s * dx + c * dy
    return (np.abs(dx) <= hx) & (np.abs(dy) <= hy)


def _star(cx, cy, r_out, yaw=0.0):
    """5-point star footprint via even-odd ray casting over its 10 vertices."""
    r_in = r_out * STAR_INNER_RATIO
    verts = []
    for k in range(5):
        a_tip = yaw + k * 2 * math.pi / 5
        a_val = a_tip + math.pi / 5
        verts.append((cx + r_out * math.cos(a_tip), cy + r_out * math.sin(a_tip)))
        verts.append((cx + r_in * math.cos(a_val), cy + r_in * math.sin(a_val)))
    inside = np.zeros((HEIGHT, WIDTH), dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 <= _PY) != (y2 <= _PY)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (_PY - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (_PX < x_at)
    return inside


def _yaw_of(pose: Transform) -> float:
    return math.atan2(pose.rotation.m[1, 0], pose.rotation.m[0, 0])


def _object_surface(obj: SceneObject):
    """(footprint, z_top array or scalar) for one primitive."""
    cx, cy, cz = obj.pose.translation
    sx, sy, sz = obj.size
    if obj.shape == "sphere":
        r = sx / 2
        fp = _disc(cx, cy, r)
        rho2 = (_PX - cx) ** 2 + (_PY - cy) ** 2
        z = cz + np.sqrt(np.maximum(r * r - rho2, 0.0))
        return fp, z
    if obj.shape == "cylinder":
        return _disc(cx, cy, sx / 2), cz + sz / 2
    if obj.shape == "star-prism":
        return _star(cx, cy, sx / 2, _yaw_of(obj.pose)), cz + sz / 2
    return _rect(cx, cy, sx / 2, sy / 2, _yaw_of(obj.pose)), cz + sz / 2


def _container_parts(c: Container):
    """Yield (entity_id, footprint, z_top, color) tuples for a container."""
    cx, cy, _ = c.pose.translation
    sx, sy, sz = c.size
    if c.kind in ("basket", "bowl"):
        outer, inner = sx / 2, sy / 2
        rim = _disc(cx, cy, outer) & ~_disc(cx, cy, inner)
        z = np.where(rim, sz, CONTAINER_FLOOR)
        yield c.id, _disc(cx, cy, outer), z, c.color
    elif c.kind == "lidded-box":
        body = _rect(cx, cy, sx / 2, sy / 2)
        wall = body & ~_rect(cx, cy, sx / 2 - WALL_THICKNESS, sy / 2 - WALL_THICKNESS)
        z = np.where(wall, sz, CONTAINER_FLOOR)
        yield c.id, body, z, c.color
        lx, ly, lz = c.lid_pose.translation
        lid_fp = _rect(lx, ly, sx / 2 + 0.005, sy / 2 + 0.005, _yaw_of(c.lid_pose))
        yield f"{c.id}.lid", lid_fp, lz + LID_THICKNESS / 2, c.color
        hp = c.handle_pose.translation
        yield f"{c.id}.lid_handle", _disc(hp[0], hp[1], HANDLE_RADIUS), hp[2] + KNOB_HEIGHT / 2, "black"
    elif c.kind == "drawer":
        yield c.id, _rect(cx, cy, sx / 2, sy / 2), sz, c.color
        if c.open_fraction > 0.0:
            x0 = cx + sx / 2
            x1 = x0 + c.open_fraction * DRAWER_STROKE
            tray = _rect((x0 + x1) / 2, cy, (x1 - x0) / 2, sy / 2 - 0.01)
            yield f"{c.id}.tray", tray, TRAY_FLOOR, c.color
        hp = c.handle_pose.translation
        bar = _rect(hp[0], hp[1], HANDLE_RADIUS, HANDLE_LENGTH / 2)
        yield f"{c.id}.handle", bar, hp[2] + HANDLE_RADIUS, "black"


def render_full(world: WorldState) -> Frame:
    """Rasterize the scene; per pixel the highest surface owns the pixel."""
    height_map = np.zeros((HEIGHT, WIDTH))
    owner = np.full((HEIGHT, WIDTH), -1, dtype=np.int32)
    rgb = np.empty((HEIGHT, WIDTH, 3), dtype=np.uint8)
    rgb[:] = TABLE_COLOR
    entity_index: dict[str, int] = {}

    def paint(entity_id, footprint, z_top, color_name):
        idx = entity_index.setdefault(entity_id, len(entity_index))
        z = np.where(footprint, z_top, -np.inf)
        wins = z > height_map
        if not wins.any():
            return
        height_map[wins] = z[wins]
        owner[wins] = idx
        rgb[wins] = PALETTE.get(color_name, PALETTE["gray"])

    for c in world.containers.values():
        for part in _container_parts(c):
            paint(*part)
    for obj in world.objects.values():
        fp, z = _object_surface(obj)
        paint(obj.id, fp, z, obj.color)

    depth = CAMERA_HEIGHT - height_map
    return Frame(rgb=rgb, depth=depth, owner=owner, entity_index=entity_index)


def render(world: WorldState) -> tuple[np.ndarray, np.ndarray]:
    """RGB (HxWx3 uint8) and depth (HxW float64 meters from the camera)."""
    frame = render_full(world)
    return frame.rgb, frame.depth


# --- segmentation oracle ---------------------------------------------------------

@dataclass(frozen=True)
class SegmentResult:
    mask: np.ndarray
    score: float
    entity_id: str


def _tokens(text: str) -> list[str]:
    out = []
    for raw in text.lower().replace(".", " ").replace(",", " ").split():
        if raw not in STOPWORDS:
            out.append(raw)
    return out


def _entity_meta(world: WorldState, entity_id: str):
    """(labels, color, size volume, xy position, surface flag)."""
    if entity_id in world.objects:
        o = world.objects[entity_id]
        vol = float(np.prod(o.size))
        return o.labels, o.color, vol, o.pose.translation[:2], o.surface
    base, _, part = entity_id.partition(".")
    c = world.containers[base]
    if part == "handle":
        return ("drawer handle", "handle"), "black", 0.0, c.handle_pose.translation[:2], False
    if part == "lid_handle":
        return ("lid handle", "handle"), "black", 0.0, c.handle_pose.translation[:2], False
    if part == "lid":
        return ("lid",), c.color, 0.0, c.lid_pose.translation[:2], False
    if part == "tray":
        return ("drawer",), c.color, 0.0, world.entity_position(entity_id)[:2], False
    labels = c.labels if part == "" else ()
    return labels, c.color, float(np.prod(c.size)), c.pose.translation[:2], False


def _placement_disc(world: WorldState, frame: Frame, surface_idx: int) -> np.ndarray:
    """Free spot on a support surface: the visible surface pixel farthest from
    every other entity center, masked as a 6 cm disc."""
    visible = frame.owner == surface_idx
    centers = []
    for eid, idx in frame.entity_index.items():
        if idx == surface_idx:
            continue
        if (frame.owner == idx).any():
            centers.append(world.entity_position(eid)[:2])
    if not centers:
        rows, cols = np.nonzero(visible)
        k = len(rows) // 2
        px, py = _PX[rows[k], cols[k]], _PY[rows[k], cols[k]]
    else:
        dist = np.full((HEIGHT, WIDTH), np.inf)
        for cxy in centers:
            d = np.hypot(_PX - cxy[0], _PY - cxy[1])
            dist = np.minimum(dist, d)
        dist[~visible] = -np.inf
        flat = int(np.argmax(dist))
        px, py = _PX.flat[flat], _PY.flat[flat]
    return _disc(px, py, 0.06) & visible


def segment(world: WorldState, query: str, threshold: float = TAU_D_DEFAULT):
    """Language-conditioned segmentation oracle.

    Exact label matches score 0.9, matches that need an adjective resolved
    (color, relative size, middle position) score 0.8, everything else 0.0;
    a result is returned only when the score strictly exceeds the threshold.
    Returns None (no match) otherwise.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold {threshold} outside (0, 1)")
    frame = render_full(world)
    query_tokens = _tokens(query)
    if not query_tokens:
        return None

    visible = []
    for eid, idx in frame.entity_index.items():
        if (frame.owner == idx).any():
            visible.append((eid, idx))

    def mask_of(idx):
        return frame.owner == idx

    # Exact pass: the query tokens equal some label's token set.
    qset = frozenset(query_tokens)
    exact = []
    for eid, idx in visible:
        labels = _entity_meta(world, eid)[0]
        if any(frozenset(_tokens(lbl)) == qset for lbl in labels):
            exact.append((eid, idx))
    score, resolved = 0.0, None
    if exact:
        score = SCORE_EXACT
        resolved = max(exact, key=lambda e: (int(mask_of(e[1]).sum()), e[0]))
    else:
        adjectives = [t for t in query_tokens if t in SIZE_SMALL | SIZE_BIG | POSITION_MIDDLE | COLOR_WORDS]
        base = frozenset(t for t in query_tokens if t not in adjectives)
        if adjectives and base:
            candidates = []
            for eid, idx in visible:
                labels, color, vol, xy, _ = _entity_meta(world, eid)
                if any(frozenset(_tokens(lbl)) == base for lbl in labels):
                    candidates.append((eid, idx, color, vol, xy))
            for adj in adjectives:
                if not candidates:
                    break
                if adj in COLOR_WORDS:
                    candidates = [c for c in candidates if c[2] == adj]
                elif adj in SIZE_SMALL or adj in SIZE_BIG:
                    key = min if adj in SIZE_SMALL else max
                    pick = key(c[3] for c in candidates)
                    chosen = [c for c in candidates if c[3] == pick]
                    if len(candidates) > 1 and len(chosen) == len(candidates):
                        raise AmbiguousQuery(f"{adj!r} cannot discriminate among {len(candidates)} candidates")
                    candidates = chosen
                elif adj in POSITION_MIDDLE:
                    if len(candidates) % 2 == 0:
                        raise AmbiguousQuery(f"{adj!r} needs an odd number of candidates, got {len(candidates)}")
                    candidates = [sorted(candidates, key=lambda c: (round(c[4][0], 6), round(c[4][1], 6)))[len(candidates) // 2]]
            if len(candidates) > 1:
                raise AmbiguousQuery(f"query {query!r} matches {len(candidates)} entities")
            if candidates:
                score = SCORE_ADJECTIVE
                resolved = (candidates[0][0], candidates[0][1])
    if resolved is None or not score > threshold:
        return None

    eid, idx = resolved
    if _entity_meta(world, eid)[4]:
        mask = _placement_disc(world, frame, idx)
    else:
        mask = mask_of(idx)
    if not mask.any():
        return None
    return SegmentResult(mask=mask, score=score, entity_id=eid)


# --- grasp-candidate proposal ------------------------------------------------------

_GRASPABLE_PARTS = ("", ".handle", ".lid_handle")


def _topdown_grasp(center, angle: float, width: float) -> GraspProposal:
    """Hand z pointing down at the table, closing axis x at the given yaw."""
    c, s = math.cos(angle), math.sin(angle)
    r = Rotation3(np.array([[c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0]]))
    return GraspProposal(np.asarray(center, dtype=float), r, width)


def _world_proposals(world: WorldState, entity_id: str) -> list[GraspProposal]:
    out: list[GraspProposal] = []
    if entity_id in world.objects:
        o = world.objects[entity_id]
        center = o.pose.translation
        sx, sy, sz = o.size
        yaw = _yaw_of(o.pose)
        if o.shape == "sphere":
            w = sx
            if w <= MAX_APERTURE:
                out = [_topdown_grasp(center, k * math.pi / 4, w) for k in range(8)]
        elif o.shape == "cylinder":
            w = sx
            if w <= MAX_APERTURE:
                out = [_topdown_grasp(center, k * math.pi / 4, w) for k in range(8)]
        elif o.shape == "box":
            for axis_angle, w in ((0.0, sx), (math.pi / 2, sy)):
                if w <= MAX_APERTURE:
                    for extra in (0.0, math.pi):
                        out.append(_topdown_grasp(center, yaw + axis_angle + extra, w))
        elif o.shape == "star-prism":
            # Closing axes bisect adjacent ribs (the valley directions), so the
            # fingers envelop the prism rather than squeezing two rib tips.
            r_out = sx / 2
            w = r_out + r_out * STAR_INNER_RATIO
            if w <= MAX_APERTURE:
                for k in range(5):
                    valley = yaw + math.pi / 5 + k * 2 * math.pi / 5
                    out.append(_topdown_grasp(center, valley, w))
        return out

    base, _, part = entity_id.partition(".")
    c = world.containers[base]
    if part == "handle":
        hp = c.handle_pose.translation
        center = np.array([hp[0], hp[1], hp[2]])
        w = 2 * HANDLE_RADIUS
        out = [_topdown_grasp(center, 0.0, w), _topdown_grasp(center, math.pi, w)]
    elif part == "lid_handle":
        hp = c.handle_pose.translation
        w = 2 * HANDLE_RADIUS
        out = [_topdown_grasp(hp, k * math.pi / 4, w) for k in range(4)]
    elif part == "" and c.kind in ("basket", "bowl"):
        w = c.size[0]
        if w <= MAX_APERTURE:
            center = c.pose.translation.copy()
            center = np.array([center[0], center[1], c.size[2] / 2])
            out = [_topdown_grasp(center, k * math.pi / 4, w) for k in range(8)]
    return out


def propose_candidates(world: WorldState, mask: np.ndarray) -> list[GraspProposal]:
    """Antipodal proposals on the masked entity, in the camera frame."""
    if mask is None or not mask.any():
        raise EmptyMask("cannot propose grasps on an empty mask")
    frame = render_full(world)
    ids, counts = np.unique(frame.owner[mask], return_counts=True)
    order = np.argsort(-counts, kind="stable")
    entity_id = None
    index_to_id = {v: k for k, v in frame.entity_index.items()}
    for pos in order:
        idx = int(ids[pos])
        if idx < 0:
            continue
        eid = index_to_id[idx]
        base, _, part = eid.partition(".")
        if "." + part in _GRASPABLE_PARTS or part == "":
            entity_id = eid
            break
    if entity_id is None:
        raise EmptyMask("mask covers no graspable entity")
    world_props = _world_proposals(world, entity_id)
    if not world_props:
        raise NoFeasibleGrasp(f"no feasible width on {entity_id} within the {MAX_APERTURE} m aperture")
    cam_inv = world.calibration.cam_in_base.inverse()
    out = []
    for g in world_props:
        cam_pose = cam_inv.compose(Transform(g.R, g.t))
        out.append(GraspProposal(cam_pose.translation, cam_pose.rotation, g.w))
    return out


def mask_entity(world: WorldState, mask: np.ndarray) -> str | None:
    """Entity owning the majority of the mask pixels, if any."""
    frame = render_full(world)
    ids, counts = np.unique(frame.owner[mask], return_counts=True)
    best = None
    for idx, n in zip(ids, counts):
        if idx >= 0 and (best is None or n > best[1]):
            best = (int(idx), int(n))
    if best is None:
        return None
    return {v: k for k, v in frame.entity_index.items()}[best[0]]


# --- stepping / effects --------------------------------------------------------------

def _draw(world: WorldState, n: int = 1) -> np.ndarray:
    """Counted seeded draw: the schedule replays exactly for a given seed."""
    rng = np.random.default_rng([world.rng_seed, world.rng_count])
    world.rng_count += 1
    return rng.random(n)


def _draw_normal(world: WorldState, sigma: float, n: int) -> np.ndarray:
    rng = np.random.default_rng([world.rng_seed, world.rng_count])
    world.rng_count += 1
    return rng.normal(0.0, sigma, n)


def _held_entity_pose(world: WorldState) -> Transform:
    return world.end_effector_pose.compose(world.hand.hold_offset)


def _set_entity_pose(world: WorldState, entity_id: str, pose: Transform):
    if entity_id in world.objects:
        world.objects[entity_id].pose = pose
        return
    base, _, part = entity_id.partition(".")
    c = world.containers[base]
    if part == "lid_handle":
        t = pose.translation
        c.lid_pose = Transform(
            pose.rotation, (t[0], t[1], t[2] - LID_THICKNESS / 2 - KNOB_HEIGHT / 2)
        )
    elif part == "":
        c.pose = Transform(pose.rotation, pose.translation)
    else:
        raise InvalidEffect(f"{entity_id} cannot be repositioned directly")


def _displace_entity(world: WorldState, entity_id: str, dx: float, dy: float):
    if entity_id in world.objects:
        o = world.objects[entity_id]
        t = o.pose.translation
        o.pose = Transform(o.pose.rotation, (t[0] + dx, t[1] + dy, t[2]))
        return True
    base, _, part = entity_id.partition(".")
    c = world.containers[base]
    if part == "" and c.kind in ("basket", "bowl"):
        t = c.pose.translation
        c.pose = Transform(c.pose.rotation, (t[0] + dx, t[1] + dy, t[2]))
        return True
    return False  # attached parts (handles, lids on boxes, trays) stay put


def _support_at(world: WorldState, x: float, y: float):
    """(support z, container id the point drops into or None)."""
    best_z, into = 0.0, None
    for c in world.containers.values():
        cx, cy, _ = c.pose.translation
        sx, sy, sz = c.size
        if c.kind in ("basket", "bowl"):
            rho = math.hypot(x - cx, y - cy)
            if rho <= sy / 2:
                if CONTAINER_FLOOR >= best_z:
                    best_z, into = CONTAINER_FLOOR, c.id
            elif rho <= sx / 2 and sz > best_z:
                best_z, into = sz, None
        elif c.kind == "lidded-box":
            if abs(x - cx) <= sx / 2 and abs(y - cy) <= sy / 2:
                if c.lid_present:
                    lid_top = c.lid_pose.translation[2] + LID_THICKNESS / 2
                    if lid_top > best_z:
                        best_z, into = lid_top, None
                else:
                    best_z, into = max(best_z, CONTAINER_FLOOR), c.id
            elif not c.lid_present and c.lid_pose is not None:
                lx, ly, lz = c.lid_pose.translation
                if abs(x - lx) <= sx / 2 and abs(y - ly) <= sy / 2:
                    lid_top = lz + LID_THICKNESS / 2
                    if lid_top > best_z:
                        best_z, into = lid_top, None
        elif c.kind == "drawer":
            if abs(x - cx) <= sx / 2 and abs(y - cy) <= sy / 2:
                if sz > best_z:
                    best_z, into = sz, None
            else:
                x0 = cx + sx / 2
                x1 = x0 + c.open_fraction * DRAWER_STROKE
                if x0 <= x <= x1 and abs(y - cy) <= sy / 2 - 0.01:
                    best_z, into = max(best_z, TRAY_FLOOR), c.id
    return best_z, into


def _half_height(world: WorldState, entity_id: str) -> float:
    """Height of the entity's reference point above whatever supports it."""
    if entity_id in world.objects:
        o = world.objects[entity_id]
        return o.size[0] / 2 if o.shape == "sphere" else o.size[2] / 2
    base, _, part = entity_id.partition(".")
    c = world.containers[base]
    if part == "lid_handle":
        # Handle center rides a full lid thickness plus half a knob above support.
        return LID_THICKNESS + KNOB_HEIGHT / 2
    return c.size[2] / 2


def step(world: WorldState, effect) -> WorldState:
    """Apply one skill effect; returns the successor state.

    Deterministic given (world, effect, rng state). Grasp effects roll the
    failure profile: a perturbation displaces the target before the fingers
    close, a slip empties the hand outright.
    """
    w = world.clone()
    w.last_injections = ()

    if isinstance(effect, MoveEffect):
        if w.hand.holding is not None:
            base, _, part = w.hand.holding.partition(".")
            if part == "handle":
                raise InvalidEffect("cannot free-move while holding a drawer handle")
        w.end_effector_pose = effect.pose
        if effect.arm_config is not None:
            w.arm_config = np.asarray(effect.arm_config, dtype=float).copy()
        if w.hand.holding is not None:
            _set_entity_pose(w, w.hand.holding, _held_entity_pose(w))
        return w

    if isinstance(effect, GraspEffect):
        if w.hand.holding is not None:
            raise InvalidEffect("hand is already holding something")
        injections = []
        if w.failure.perturb_prob > 0.0:
            if float(_draw(w)[0]) < w.failure.perturb_prob:
                dx, dy = _draw_normal(w, w.failure.perturb_sigma, 2)
                if _displace_entity(w, effect.entity_id, float(dx), float(dy)):
                    injections.append(f"perturb:{effect.entity_id}:{dx:.4f},{dy:.4f}")
        slipped = False
        if w.failure.slip_prob > 0.0:
            slipped = float(_draw(w)[0]) < w.failure.slip_prob
            if slipped:
                injections.append(f"slip:{effect.entity_id}")
        entity_pose = w.entity_pose(effect.entity_id)
        miss = (
            float(np.linalg.norm(entity_pose.translation - effect.hand_pose.translation))
            > CAPTURE_RADIUS
        )
        if slipped or miss:
            w.hand.holding = None
            w.hand.hold_offset = None
            w.hand.finger_positions = np.ones(6)
        else:
            closure = 1.0 - 0.8 * (effect.width / MAX_APERTURE)
            w.hand.finger_positions = np.full(6, closure)
            w.hand.holding = effect.entity_id
            w.hand.hold_offset = w.end_effector_pose.inverse().compose(entity_pose)
        w.last_injections = tuple(injections)
        return w

    if isinstance(effect, ReleaseEffect):
        if w.hand.holding is None:
            raise InvalidEffect("nothing to release")
        held = w.hand.holding
        pose = _held_entity_pose(w)
        x, y = float(pose.translation[0]), float(pose.translation[1])
        support_z, into = _support_at(w, x, y)
        z = support_z + _half_height(w, held)
        base, _, part = held.partition(".")
        if part in ("handle",):
            pass  # drawer handles stay attached; nothing falls
        else:
            landed = Transform(pose.rotation, (x, y, z))
            _set_entity_pose(w, held, landed)
            if held in w.objects:
                w.objects[held].inside = into
        w.hand.holding = None
        w.hand.hold_offset = None
        w.hand.finger_positions = np.zeros(6)
        return w

    if isinstance(effect, RotateEffect):
        spin = Transform(Rotation3.from_axis_angle((0, 0, 1), effect.theta), (0, 0, 0))
        w.end_effector_pose = w.end_effector_pose.compose(spin)
        if w.hand.holding is not None:
            _set_entity_pose(w, w.hand.holding, _held_entity_pose(w))
        return w

    if isinstance(effect, PullEffect):
        held = w.hand.holding
        if held is None:
            raise InvalidEffect("pull/twist requires a held handle")
        base, _, part = held.partition(".")
        if part == "handle":
            c = w.containers[base]
            before = c.open_fraction
            c.open_fraction = min(1.0, max(0.0, before + effect.d / DRAWER_STROKE))
            shift = (c.open_fraction - before) * DRAWER_STROKE
            for obj in w.objects.values():
                if obj.inside == c.id:
                    t = obj.pose.translation
                    obj.pose = Transform(obj.pose.rotation, (t[0] + shift, t[1], t[2]))
            ee = w.end_effector_pose.translation
            w.end_effector_pose = Transform(
                w.end_effector_pose.rotation, (ee[0] + shift, ee[1], ee[2])
            )
            return w
        if part == "lid_handle" or held in w.objects:
            if effect.theta == 0.0 and effect.d == 0.0:
                raise InvalidEffect("pull/twist with zero motion")
            spin = Transform(Rotation3.from_axis_angle((0, 0, 1), effect.theta), (0, 0, 0))
            w.end_effector_pose = w.end_effector_pose.compose(spin)
            _set_entity_pose(w, held, _held_entity_pose(w))
            return w
        raise InvalidEffect(f"cannot pull {held}")

    raise InvalidEffect(f"unknown effect {type(effect).__name__}")


# --- depth utilities ------------------------------------------------------------------

def depth_change(before: np.ndarray, after: np.ndarray, region: np.ndarray) -> float:
    """Fraction of region pixels whose depth moved more than 5 mm."""
    if before.shape != after.shape or before.shape != region.shape:
        raise DimensionMismatch(
            f"depth/region shapes differ: {before.shape}, {after.shape}, {region.shape}"
        )
    total = int(region.sum())
    if total == 0:
        return 0.0
    delta = np.abs(after - before) > DEPTH_DELTA
    return float((delta & region).sum()) / total


def dilate(mask: np.ndarray, px: int = 3) -> np.ndarray:
    out = mask.copy()
    for _ in range(px):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


# --- scene files ------------------------------------------------------------------------

def _parse_kv(tokens):
    kv = {}
    for tok in tokens:
        if "=" not in tok:
            raise ValueError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v
    return kv


def _parse_pose(kv) -> Transform:
    if "pose" in kv:
        return Transform.from_flat(kv["pose"].split())
    if "at" in kv:
        parts = [float(v) for v in kv["at"].split()]
        if len(parts) == 2:
            parts.append(float("nan"))  # rest-on-table, resolved by caller
        return Transform(Rotation3.identity(), parts)
    raise ValueError("missing pose= or at=")


def load_scene(path) -> dict:
    """Parse a scene file into {'objects', 'containers', 'failure'}."""
    objects: list[SceneObject] = []
    containers: list[Container] = []
    failure = FailureProfile()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            tokens = shlex.split(line)
            kind, kv = tokens[0], _parse_kv(tokens[1:])
            if kind == "object":
                size = np.array([float(v) for v in kv["size"].split()])
                pose = _parse_pose(kv)
                t = pose.translation.copy()
                if math.isnan(t[2]):
                    shape = kv["shape"]
                    t[2] = size[0] / 2 if shape == "sphere" else size[2] / 2
                    pose = Transform(pose.rotation, t)
                objects.append(
                    SceneObject(
                        id=kv["id"],
                        labels=tuple(filter(None, kv["labels"].split(";"))),
                        shape=kv["shape"],
                        pose=pose,
                        size=size,
                        color=kv.get("color", "gray"),
                        inside=kv.get("inside"),
                        surface=kv.get("surface", "false").lower() == "true",
                    )
                )
            elif kind == "container":
                size = np.array([float(v) for v in kv["size"].split()])
                pose = _parse_pose(kv)
                t = pose.translation.copy()
                if math.isnan(t[2]):
                    t[2] = size[2] / 2
                    pose = Transform(pose.rotation, t)
                containers.append(
                    Container(
                        id=kv["id"],
                        kind=kv["kind"],
                        labels=tuple(filter(None, kv["labels"].split(";"))),
                        pose=pose,
                        size=size,
                        color=kv.get("color", "wood"),
                        open_fraction=float(kv.get("open", "0")),
                    )
                )
                if kv.get("lid", "true").lower() == "false" and containers[-1].kind == "lidded-box":
                    # Lid shipped already set aside: park it past the box +y edge.
                    c = containers[-1]
                    cx, cy, _ = c.pose.translation
                    c.lid_pose = Transform(
                        Rotation3.identity(),
                        (cx, cy + c.size[1] + 0.06, LID_THICKNESS / 2),
                    )
            elif kind == "failure":
                failure = FailureProfile(
                    slip_prob=float(kv.get("slip_prob", "0")),
                    perturb_prob=float(kv.get("perturb_prob", "0")),
                    perturb_sigma=float(kv.get("perturb_sigma", "0.05")),
                )
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (KeyError, ValueError, IndexError) as exc:
            raise SceneFormatError(f"{path}:{lineno}: {exc}") from exc
    ids = [o.id for o in objects] + [c.id for c in containers]
    if len(set(ids)) != len(ids):
        raise SceneFormatError(f"{path}: duplicate entity ids")
    for o in objects:
        if o.inside is not None and o.inside not in {c.id for c in containers}:
            raise SceneFormatError(f"{path}: {o.id} is inside unknown container {o.inside}")
    return {
        "objects": {o.id: o for o in objects},
        "containers": {c.id: c for c in containers},
        "failure": failure,
    }


def world_from_scene(
    scene: dict,
    seed: int,
    start_pose: Transform,
    start_config,
    failure: FailureProfile | None = None,
) -> WorldState:
    scene = copy.deepcopy(scene)
    return WorldState(
        objects=scene["objects"],
        containers=scene["containers"],
        end_effector_pose=start_pose,
        arm_config=np.asarray(start_config, dtype=float).copy(),
        hand=HandState(),
        failure=failure if failure is not None else scene["failure"],
        rng_seed=int(seed),
    )
