"""Synthetic indoor scene, device random walk, frame visibility and keyframes.

Stands in for a real capture pipeline: a cloud of map points in a box, a
device wandering through it, and per-frame sets of observed point ids.
Real exports can be fed in through the text trace format instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covis import Frame

TRACE_MAGIC = "maptwin-trace v1"


@dataclass(frozen=True)
class Box:
    lo: tuple = (0.0, 0.0, 0.0)
    hi: tuple = (10.0, 10.0, 3.0)

    def __post_init__(self):
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ValueError("box corners must be 3-vectors")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate bounds {self.lo} .. {self.hi}")

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= np.asarray(self.lo)) and np.all(p <= np.asarray(self.hi)))


@dataclass(frozen=True, eq=False)
class Scene:
    points: np.ndarray
    bounds: Box
    seed: int

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Pose:
    position: tuple
    yaw: float


@dataclass(frozen=True)
class WalkParams:
    step: float = 0.06       # max displacement per frame, meters
    turn: float = 0.08       # max yaw change per frame, radians
    margin: float = 2.0      # walls for the walk sit this far inside the scene box
    steer: float = 0.03      # max corrective turn per step toward the room centre


@dataclass(frozen=True)
class VisibilityModel:
    fov: float = 0.52        # half-angle of the horizontal cone
    max_range: float = 6.0
    detect_prob: float = 0.9

    def __post_init__(self):
        if not 0 < self.fov < math.pi:
            raise ValueError("fov half-angle must lie in (0, pi)")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if not 0 < self.detect_prob <= 1:
            raise ValueError("detect_prob must lie in (0, 1]")


@dataclass(frozen=True)
class SlotConfig:
    frames_per_slot: int = 20
    walk: WalkParams = field(default_factory=WalkParams)
    visibility: VisibilityModel = field(default_factory=VisibilityModel)
    jaccard_threshold: float = 0.7


@dataclass(frozen=True)
class FrameBatch:
    slot: int
    frames: tuple

    @property
    def keyframes(self) -> tuple:
        return tuple(f for f in self.frames if f.is_keyframe)

    def frame(self, frame_id: int) -> Frame:
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        raise KeyError(frame_id)

    def frame_ids(self) -> list[int]:
        return [f.frame_id for f in self.frames]


def generate_scene(n_points: int, bounds: Box = Box(), seed: int = 0) -> Scene:
    if n_points < 1:
        raise ValueError("a scene needs at least one map point")
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(bounds.lo, float), np.asarray(bounds.hi, float)
    pts = lo + rng.random((n_points, 3)) * (hi - lo)
    pts.setflags(write=False)
    return Scene(pts, bounds, seed)


def wrap_angle(a: float) -> float:
    if -math.pi <= a < math.pi:
        return a
    return (a + math.pi) % (2 * math.pi) - math.pi


def _reflect(x: float, lo: float, hi: float) -> tuple[float, bool]:
    flipped = False
    width = hi - lo
    # a single fold handles steps shorter than the box; loop covers the rest
    while x < lo or x > hi:
        x = 2 * lo - x if x < lo else 2 * hi - x
        flipped = not flipped
        if width <= 0:
            break
    return x, flipped


def walk_limits(bounds: Box, walk: WalkParams, axis: int) -> tuple[float, float]:
    lo, hi = bounds.lo[axis], bounds.hi[axis]
    m = min(walk.margin, 0.49 * (hi - lo))
    return lo + m, hi - m


def step_pose(p: Pose, walk: WalkParams, bounds: Box, rng: np.random.Generator) -> Pose:
    """Move forward along the heading by up to ``walk.step``, turn by up to ``walk.turn``.

    Outside the central region the heading is steered back toward the room
    centre by at most ``walk.steer`` per step (a device that does not move is
    not steered); a step that still crosses the walking limits is reflected
    back inside.
    """
    yaw = p.yaw + walk.turn * (2 * rng.random() - 1)
    dist = walk.step * rng.random()
    (x0, x1), (y0, y1) = walk_limits(bounds, walk, 0), walk_limits(bounds, walk, 1)
    px, py = p.position[0], p.position[1]
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    outside = abs(px - cx) > 0.25 * (x1 - x0) or abs(py - cy) > 0.25 * (y1 - y0)
    if walk.steer > 0 and walk.step > 0 and outside:
        err = wrap_angle(math.atan2(cy - py, cx - px) - yaw)
        yaw += max(-walk.steer, min(walk.steer, err))
    x, _ = _reflect(px + dist * math.cos(yaw), x0, x1)
    y, _ = _reflect(py + dist * math.sin(yaw), y0, y1)
    return Pose((x, y, p.position[2]), wrap_angle(yaw))


def frustum_mask(s: Scene, p: Pose, v: VisibilityModel) -> np.ndarray:
    rel = s.points - np.asarray(p.position)
    dist = np.linalg.norm(rel, axis=1)
    bearing = np.arctan2(rel[:, 1], rel[:, 0]) - p.yaw
    bearing = (bearing + np.pi) % (2 * np.pi) - np.pi
    return (dist <= v.max_range) & (np.abs(bearing) <= v.fov)


def visible_points(s: Scene, p: Pose, v: VisibilityModel, rng: np.random.Generator) -> frozenset:
    cand = frustum_mask(s, p, v)
    # one draw per point keeps the rng stream independent of the pose
    keep = rng.random(s.n_points) < v.detect_prob
    return frozenset(np.flatnonzero(cand & keep).tolist())


def jaccard(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 1.0


def select_keyframes(frames, jaccard_threshold: float = 0.7) -> list:
    """Frames whose overlap with the last keyframe drops below the threshold."""
    if not frames:
        raise ValueError("select_keyframes needs at least one frame")
    if not 0 <= jaccard_threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    keys = [frames[0]]
    for f in frames[1:]:
        if jaccard(f.points, keys[-1].points) < jaccard_threshold:
            keys.append(f)
    return keys


def tag_keyframes(frames, jaccard_threshold: float, slot: int) -> FrameBatch:
    key_ids = {f.frame_id for f in select_keyframes(frames, jaccard_threshold)}
    tagged = tuple(Frame(f.frame_id, slot, f.points, f.frame_id in key_ids) for f in frames)
    return FrameBatch(slot, tagged)


def make_slot_frames(s: Scene, start: Pose, cfg: SlotConfig, slot: int, first_id: int,
                     walk_rng: np.random.Generator, vis_rng: np.random.Generator):
    """One slot of captures; returns ``(batch, end_pose)``. Ids run from ``first_id``."""
    if cfg.frames_per_slot < 1:
        raise ValueError("frames_per_slot must be >= 1")
    pose = start
    raw = []
    for k in range(cfg.frames_per_slot):
        pose = step_pose(pose, cfg.walk, s.bounds, walk_rng)
        raw.append(Frame(first_id + k, slot, visible_points(s, pose, cfg.visibility, vis_rng)))
    return tag_keyframes(raw, cfg.jaccard_threshold, slot), pose


def save_trace(batches, path, n_points: int) -> None:
    lines = [f"{TRACE_MAGIC} n_points={n_points}"]
    for b in batches:
        for f in b.frames:
            pts = ",".join(str(p) for p in sorted(f.points)) or "-"
            lines.append(f"{b.slot} {f.frame_id} {int(f.is_keyframe)} {pts}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_trace(path) -> tuple[list[FrameBatch], int]:
    """Parse a trace file into ``(batches, n_points)``."""
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text or not text[0].startswith(TRACE_MAGIC + " n_points="):
        raise ValueError("line 1: missing trace header")
    try:
        n_points = int(text[0].split("n_points=", 1)[1])
    except ValueError:
        raise ValueError("line 1: bad n_points in header") from None
    batches: list[FrameBatch] = []
    current: list[Frame] = []
    current_slot = None
    seen_ids = set()
    for lineno, line in enumerate(text[1:], 2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            slot, fid, key = int(parts[0]), int(parts[1]), int(parts[2])
            pts = [] if parts[3] == "-" else [int(x) for x in parts[3].split(",")]
        except ValueError:
            raise ValueError(f"line {lineno}: malformed record {line!r}") from None
        if key not in (0, 1):
            raise ValueError(f"line {lineno}: keyframe flag must be 0 or 1")
        bad = [p for p in pts if not 0 <= p < n_points]
        if bad:
            raise ValueError(f"line {lineno}: point id {bad[0]} outside [0, {n_points})")
        if fid in seen_ids:
            raise ValueError(f"line {lineno}: duplicate frame id {fid}")
        seen_ids.add(fid)
        if current_slot is not None and slot != current_slot:
            batches.append(FrameBatch(current_slot, tuple(current)))
            current = []
        current_slot = slot
        current.append(Frame(fid, slot, frozenset(pts), bool(key)))
    if current:
        batches.append(FrameBatch(current_slot, tuple(current)))
    return batches, n_points
