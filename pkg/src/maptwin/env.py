"""Slot-level map-management MDP: state assembly, feasibility, transition, reward."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from .covis import (CovisibilityGraph, UncertaintyParams, add_frame, cut_vertices,
                    is_connected, remove_frames, uncertainty)
from .scene import (Box, FrameBatch, Pose, Scene, SlotConfig, VisibilityModel, WalkParams,
                    generate_scene, make_slot_frames, walk_limits)

MAX_REROLLS = 10
N_NODE_FEATURES = 8
N_GLOBAL_FEATURES = 4


@dataclass(frozen=True)
class EnvConfig:
    capacity: int = 10
    frames_per_slot: int = 20
    history: int = 3
    gamma: float = 0.9
    episode_slots: int = 40
    n_points: int = 400
    bounds: Box = field(default_factory=Box)
    walk: WalkParams = field(default_factory=WalkParams)
    visibility: VisibilityModel = field(default_factory=VisibilityModel)
    jaccard_threshold: float = 0.7
    channel: ch.ChannelModel = field(default_factory=lambda: ch.ChannelModel(frame_bits=5e6))
    pi_scale: float = 1.0
    penalty_factor: float = 10.0
    point_scale: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("capacity D must be >= 2")
        if self.frames_per_slot < 1:
            raise ValueError("frames_per_slot must be >= 1")
        if self.history < 0:
            raise ValueError("history window T must be >= 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.episode_slots < 0:
            raise ValueError("episode length must be >= 0")

    @property
    def slot_config(self) -> SlotConfig:
        return SlotConfig(self.frames_per_slot, self.walk, self.visibility, self.jaccard_threshold)

    @property
    def uncertainty_params(self) -> UncertaintyParams:
        return UncertaintyParams(self.pi_scale)


def desk_preset(**overrides) -> EnvConfig:
    return replace(EnvConfig(), **overrides)


def table1_preset(**overrides) -> EnvConfig:
    """Sizes and link parameters of the published simulation table."""
    base = EnvConfig(capacity=25, frames_per_slot=60,
                     channel=ch.ChannelModel(r_high=20e6, r_low=8e6, frame_bits=2e6, slot_seconds=2.0))
    return replace(base, **overrides)


@dataclass(frozen=True, eq=False)
class SlotRecord:
    graph: CovisibilityGraph
    batch: FrameBatch
    channel: ch.ChannelState


@dataclass(frozen=True, eq=False)
class EnvState:
    slot: int
    history: tuple
    budget: int
    penalty: float
    cfg: EnvConfig
    next_frame_id: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def graph(self) -> CovisibilityGraph:
        return self.history[-1].graph

    @property
    def batch(self) -> FrameBatch:
        return self.history[-1].batch

    @property
    def channel(self) -> ch.ChannelState:
        return self.history[-1].channel

    @property
    def keyframes(self) -> tuple:
        return self.batch.keyframes

    def same_as(self, other: "EnvState") -> bool:
        if (self.slot, self.budget, self.penalty, self.next_frame_id) != \
                (other.slot, other.budget, other.penalty, other.next_frame_id):
            return False
        if len(self.history) != len(other.history):
            return False
        return all(a.graph == b.graph and a.batch == b.batch and a.channel == b.channel
                   for a, b in zip(self.history, other.history))


@dataclass(frozen=True)
class MapAction:
    upload: frozenset = frozenset()
    evict: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "upload", frozenset(self.upload))
        object.__setattr__(self, "evict", frozenset(self.evict))


class Violation(enum.Enum):
    UPLOAD_SUBSET = "upload is not a subset of the current batch"
    BUDGET = "upload exceeds the slot budget"
    EVICT_POOL = "eviction outside the stored and uploaded frames"
    CARDINALITY = "resulting map size differs from min(D, pool)"
    CONNECTIVITY = "resulting map is disconnected"


class InfeasibleAction(ValueError):
    def __init__(self, violation: Violation):
        super().__init__(violation.value)
        self.violation = violation


class EpisodeOver(RuntimeError):
    pass


def target_size(s: EnvState, upload) -> int:
    return min(s.cfg.capacity, len(s.graph) + len(upload))


def feasible(s: EnvState, a: MapAction) -> Violation | None:
    """First violated constraint, or None when the action is admissible."""
    batch_ids = set(s.batch.frame_ids())
    if not a.upload <= batch_ids:
        return Violation.UPLOAD_SUBSET
    if len(a.upload) > s.budget:
        return Violation.BUDGET
    stored = set(s.graph.frame_ids())
    if not a.evict <= stored | a.upload:
        return Violation.EVICT_POOL
    pool = len(stored | a.upload)
    if pool - len(a.evict) != min(s.cfg.capacity, pool):
        return Violation.CARDINALITY
    if not is_connected(_updated_graph(s, a)):
        return Violation.CONNECTIVITY
    return None


def _updated_graph(s: EnvState, a: MapAction) -> CovisibilityGraph:
    g = s.graph
    for fid in sorted(a.upload - a.evict):
        g = add_frame(g, s.batch.frame(fid))
    return remove_frames(g, a.evict - a.upload)


def apply_action(s: EnvState, a: MapAction) -> CovisibilityGraph:
    v = feasible(s, a)
    if v is not None:
        raise InfeasibleAction(v)
    return _updated_graph(s, a)


def clamp_uncertainty(u: float, penalty: float) -> float:
    return min(u, penalty)


def reward(g_next: CovisibilityGraph, keyframes, params: UncertaintyParams, penalty: float) -> float:
    """Negative mean uncertainty of the map as seen from each upcoming keyframe."""
    if not keyframes:
        return -penalty
    total = 0.0
    for f in keyframes:
        total += clamp_uncertainty(uncertainty(add_frame(g_next, f), params), penalty)
    return -total / len(keyframes)


def bootstrap_map(keyframes, capacity: int) -> CovisibilityGraph:
    g = CovisibilityGraph()
    for f in keyframes:
        if len(g) >= capacity:
            break
        g2 = add_frame(g, f)
        if len(g) == 0 or is_connected(g2):
            g = g2
    return g


class MapEnv:
    """One trajectory through a fixed scene.

    Three independent rng streams (walk, visibility, channel) are derived from
    the episode seed so that the channel draw never perturbs the trajectory.
    """

    def __init__(self, cfg: EnvConfig, scene: Scene | None = None):
        self.cfg = cfg
        self.scene = scene if scene is not None else generate_scene(cfg.n_points, cfg.bounds, cfg.seed)
        self.state: EnvState | None = None
        self.steps_taken = 0

    def _streams(self, seed: int, attempt: int):
        ss = np.random.SeedSequence([seed, attempt])
        return [np.random.default_rng(s) for s in ss.spawn(3)]

    def reset(self, seed: int | None = None) -> EnvState:
        seed = self.cfg.seed if seed is None else seed
        cfg = self.cfg
        for attempt in range(MAX_REROLLS + 1):
            self.walk_rng, self.vis_rng, self.channel_rng = self._streams(seed, attempt)
            (x0, x1), (y0, y1) = walk_limits(cfg.bounds, cfg.walk, 0), walk_limits(cfg.bounds, cfg.walk, 1)
            xy = np.array([x0, y0]) + self.walk_rng.random(2) * np.array([x1 - x0, y1 - y0])
            z = 0.5 * (cfg.bounds.lo[2] + cfg.bounds.hi[2])
            yaw = float(self.walk_rng.uniform(-np.pi, np.pi))
            pose = Pose((float(xy[0]), float(xy[1]), float(z)), yaw)
            warmup, pose = make_slot_frames(self.scene, pose, cfg.slot_config, 0, 0,
                                            self.walk_rng, self.vis_rng)
            g = bootstrap_map(warmup.keyframes, cfg.capacity)
            if len(g) >= 2:
                break
        else:
            raise RuntimeError(f"no connected bootstrap map after {MAX_REROLLS} re-rolls")
        # the warm-up slot only seeds the map; decisions start at slot 1
        batch, pose = make_slot_frames(self.scene, pose, cfg.slot_config, 1, cfg.frames_per_slot,
                                       self.walk_rng, self.vis_rng)
        self.pose = pose
        self.attempts = attempt
        params = cfg.uncertainty_params
        u0 = uncertainty(g, params)
        penalty = cfg.penalty_factor * max(abs(u0), 1.0)
        chan = cfg.channel.initial
        self.state = EnvState(1, (SlotRecord(g, batch, chan),), ch.budget(chan, cfg.channel),
                              penalty, cfg, 2 * cfg.frames_per_slot)
        self.steps_taken = 0
        return self.state

    @property
    def done(self) -> bool:
        return self.steps_taken >= self.cfg.episode_slots

    def step(self, a: MapAction) -> tuple[EnvState, float, bool]:
        if self.state is None:
            raise RuntimeError("call reset() first")
        if self.done:
            raise EpisodeOver(f"episode ended after {self.cfg.episode_slots} slots")
        s = self.state
        g_next = apply_action(s, a)
        batch, self.pose = make_slot_frames(self.scene, self.pose, self.cfg.slot_config, s.slot + 1,
                                            s.next_frame_id, self.walk_rng, self.vis_rng)
        chan = ch.next_state(s.channel, self.cfg.channel, self.channel_rng)
        r = reward(g_next, batch.keyframes, self.cfg.uncertainty_params, s.penalty)
        self.state = advance(s, g_next, batch, chan)
        self.steps_taken += 1
        return self.state, r, self.done


def advance(s: EnvState, g_next: CovisibilityGraph, batch: FrameBatch, chan: ch.ChannelState) -> EnvState:
    """Roll the history window forward by one slot."""
    keep = s.cfg.history + 1
    hist = (s.history + (SlotRecord(g_next, batch, chan),))[-keep:]
    next_id = max(s.next_frame_id, max(batch.frame_ids(), default=-1) + 1)
    return EnvState(s.slot + 1, hist, ch.budget(chan, s.cfg.channel), s.penalty, s.cfg, next_id)


@dataclass(frozen=True, eq=False)
class StateFeatures:
    """Inputs for the policy and value networks.

    Rows are stored frames (sorted by id) followed by the current batch's
    candidates in capture order.  Node columns: weighted degree, degree,
    point count, slots since capture, keyframe flag, candidate flag, overlap
    with the newest frame of the batch, and that overlap standardized within
    its own group (stored or candidate).
    """
    node_ids: list
    n_stored: int
    x: np.ndarray            # (n_nodes, N_NODE_FEATURES)
    globals: np.ndarray      # (4,)
    adj: np.ndarray          # normalized adjacency with self-loops


def encode_features(s: EnvState) -> StateFeatures:
    cached = s._cache.get("features")
    if cached is not None:
        return cached
    cfg = s.cfg
    stored = s.graph.frames()
    cands = list(s.batch.frames)
    nodes = stored + cands
    n, k = len(nodes), len(stored)
    w = np.zeros((n, n))
    for i in range(n):
        mi = nodes[i].mask
        for j in range(i + 1, n):
            wij = (mi & nodes[j].mask).bit_count()
            if wij:
                w[i, j] = w[j, i] = wij
    # stored rows: degree within the map; candidate rows: overlap with the map
    to_map = w[:, :k]
    wdeg = to_map.sum(axis=1)
    pdeg = (to_map > 0).sum(axis=1)
    x = np.zeros((n, N_NODE_FEATURES))
    x[:, 0] = wdeg / (cfg.capacity * cfg.point_scale)
    x[:, 1] = pdeg / cfg.capacity
    x[:, 2] = [f.n_points / cfg.point_scale for f in nodes]
    x[:, 3] = [(s.slot - f.slot) / max(cfg.history + 1, 1) for f in nodes]
    x[:, 4] = [float(f.is_keyframe) for f in nodes]
    x[k:, 5] = 1.0
    # overlap with the newest capture: the best cheap proxy for the next view
    newest = max(cands, key=lambda f: f.frame_id).mask if cands else 0
    x[:, 6] = [(f.mask & newest).bit_count() / cfg.point_scale for f in nodes]
    # the same overlap standardized within the stored set and within the batch,
    # so that small spreads still rank clearly
    for rows in (slice(0, k), slice(k, n)):
        col = x[rows, 6]
        if col.size:
            x[rows, 7] = (col - col.mean()) / (col.std() + 1e-3)
    g = np.array([
        float(s.channel == ch.ChannelState.HIGH),
        s.budget / cfg.frames_per_slot,
        k / cfg.capacity,
        ((s.slot - 1) % max(cfg.episode_slots, 1)) / max(cfg.episode_slots, 1),
    ])
    a = w / cfg.point_scale + np.eye(n)
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    adj = a * dinv[:, None] * dinv[None, :]
    feats = StateFeatures([f.frame_id for f in nodes], k, x, g, adj)
    s._cache["features"] = feats
    return feats


@dataclass
class ConstraintMonitor:
    """Environment-side assertion layer; counts violations of applied actions."""
    checked: int = 0
    violations: int = 0
    by_kind: dict = field(default_factory=dict)

    def check(self, s: EnvState, a: MapAction, g_next: CovisibilityGraph | None = None) -> bool:
        self.checked += 1
        problems = []
        v = feasible(s, a)
        if v is not None:
            problems.append(v.name)
        if len(a.upload) * s.cfg.channel.frame_bits > \
                s.cfg.channel.rate(s.channel) * s.cfg.channel.slot_seconds + 1e-6:
            problems.append("RATE")
        if g_next is not None:
            pool = len(set(s.graph.frame_ids()) | a.upload)
            if len(g_next) > s.cfg.capacity:
                problems.append("CAPACITY")
            if len(g_next) != min(s.cfg.capacity, pool):
                problems.append("FIXED_CARDINALITY")
            if not is_connected(g_next):
                problems.append("CONNECTED")
        for p in problems:
            self.by_kind[p] = self.by_kind.get(p, 0) + 1
        self.violations += bool(problems)
        return not problems


def removable(g: CovisibilityGraph) -> set:
    """Nodes that can be dropped without disconnecting the map."""
    if len(g) <= 1:
        return set(g.frame_ids())
    return set(g.frame_ids()) - cut_vertices(g)
