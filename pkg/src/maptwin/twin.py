"""Edge-side twin: experience buffers, a visibility predictor, emulated steps.

The predictor works on slot summaries: for each slot, the fraction of its
frames that saw each map point, plus the keyframe count and channel state.
A GRU over the last ``T`` summaries predicts the next slot's fraction
vector as a correction to persistence: a per-point skip term carries the
newest summary straight to the output logits, so an untrained predictor
already guesses "the next slot sees what this one saw".  Points predicted
above one half form the next view; every predicted frame is a
detection-thinned copy of it.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import channel as ch
from . import nn
from .covis import CovisibilityGraph, Frame
from .env import (EnvConfig, EnvState, MapAction, SlotRecord, advance, apply_action, reward)
from .scene import FrameBatch, tag_keyframes

REAL_CAPACITY = 2000
ARTIFICIAL_CAPACITY = 10000
SEED_WINDOW = 200
MAX_RESAMPLES = 100
SNAPSHOT_VERSION = 1


class Kind(enum.Enum):
    REAL = "real"
    ARTIFICIAL = "artificial"


@dataclass(frozen=True, eq=False)
class Experience:
    state: EnvState
    action: MapAction
    reward: float
    next_state: EnvState
    kind: Kind
    scores: object = None      # the ScoreAction that produced ``action``, if any

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError(f"experience reward must be finite, got {self.reward}")


class ReplayBuffer:
    """Fixed-capacity FIFO of one kind of experience."""

    def __init__(self, capacity: int, kind: Kind):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.kind = kind
        self._items: deque = deque(maxlen=capacity)
        self.inserted = 0

    def store(self, e: Experience) -> None:
        if e.kind is not self.kind:
            raise ValueError(f"{e.kind.value} experience offered to a {self.kind.value} buffer")
        self._items.append(e)
        self.inserted += 1

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i) -> Experience:
        return self._items[i]

    def __iter__(self):
        return iter(self._items)

    def recent(self, n: int) -> list[Experience]:
        n = min(n, len(self._items))
        return list(self._items)[len(self._items) - n:]

    def sample(self, rng: np.random.Generator, k: int) -> list[Experience]:
        """``min(k, len)`` distinct experiences, uniformly."""
        k = min(k, len(self._items))
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


def store_real(b: ReplayBuffer, e: Experience) -> None:
    if b.kind is not Kind.REAL:
        raise ValueError("store_real needs a real-experience buffer")
    b.store(e)


# ---------------------------------------------------------------------------
# predictor


def summarize(rec: SlotRecord, n_points: int, frames_per_slot: int) -> np.ndarray:
    """``[fraction of frames seeing each point..., keyframe share, High flag]``."""
    v = np.zeros(n_points + 2)
    frames = rec.batch.frames
    for f in frames:
        if f.points:
            v[np.fromiter(f.points, dtype=np.int64)] += 1.0
    if frames:
        v[:n_points] /= len(frames)
    v[n_points] = len(rec.batch.keyframes) / max(frames_per_slot, 1)
    v[n_points + 1] = float(rec.channel == ch.ChannelState.HIGH)
    return v


def visibility_target(batch: FrameBatch, n_points: int) -> np.ndarray:
    v = np.zeros(n_points)
    for f in batch.frames:
        if f.points:
            v[np.fromiter(f.points, dtype=np.int64)] += 1.0
    return v / max(len(batch.frames), 1)


SKIP_GAIN = 8.0     # initial logit slope of the persistence term


@dataclass
class Predictor:
    n_points: int
    history: int
    hidden: int
    params: dict
    opt: nn.AdamState = field(default_factory=nn.AdamState)

    @property
    def spec(self) -> nn.NetSpec:
        return predictor_spec(self.n_points, self.hidden)

    @classmethod
    def create(cls, n_points: int, history: int, hidden: int = 32,
               rng: np.random.Generator | None = None) -> "Predictor":
        if history < 1:
            raise ValueError("the predictor needs a history window T >= 1")
        spec = predictor_spec(n_points, hidden)
        rng = rng if rng is not None else np.random.default_rng(0)
        params = nn.init_params(spec, rng)
        # logit = gain * (fraction - 1/2): points seen by most frames stay visible
        params["skip.a"] = np.full(n_points, SKIP_GAIN)
        params["skip.b"] = np.full(n_points, -SKIP_GAIN / 2)
        return cls(n_points, history, hidden, params)

    @classmethod
    def zeros(cls, n_points: int, history: int, hidden: int = 8) -> "Predictor":
        shapes = {**predictor_spec(n_points, hidden).param_shapes(), "skip.a": (n_points,), "skip.b": (n_points,)}
        return cls(n_points, history, hidden, {k: np.zeros(s) for k, s in shapes.items()})


def predictor_spec(n_points: int, hidden: int) -> nn.NetSpec:
    """GRU trunk and linear logit head; the skip term is added outside the spec."""
    return nn.NetSpec([nn.recurrent(n_points + 2, hidden), nn.dense(hidden, n_points, "linear")])


def _graph(p: Predictor, steps):
    """Per-point probabilities for a batch of input sequences, on a fresh tape."""
    tape = nn.Tape()
    pv = {k: tape.var(v) for k, v in p.params.items()}
    logits = nn.apply(p.spec, pv, steps)
    last = steps[-1][:, :p.n_points]
    out = nn.sigmoid(logits + pv["skip.a"] * last + pv["skip.b"])
    return out, tape, pv


def _sequence(records, p: Predictor, frames_per_slot: int) -> list[np.ndarray]:
    if len(records) < p.history:
        raise ValueError(f"predictor needs {p.history} slots of history, got {len(records)}")
    return [summarize(r, p.n_points, frames_per_slot) for r in records[-p.history:]]


def _state_sequence(s: EnvState, p: Predictor) -> list[np.ndarray]:
    key = ("summary", p.n_points, p.history)
    seq = s._cache.get(key)
    if seq is None:
        seq = s._cache[key] = _sequence(s.history, p, s.cfg.frames_per_slot)
    return seq


def _state_target(s: EnvState, n_points: int) -> np.ndarray:
    key = ("visibility", n_points)
    v = s._cache.get(key)
    if v is None:
        v = s._cache[key] = visibility_target(s.batch, n_points)
    return v


def _forward(p: Predictor, seq) -> np.ndarray:
    out, _, _ = _graph(p, [x[None, :] for x in seq])
    return out.value[0]


def predict_probabilities(p: Predictor, records, frames_per_slot: int) -> np.ndarray:
    return _forward(p, _sequence(records, p, frames_per_slot))


def training_pairs(transitions, p: Predictor):
    """Stacked ``(inputs per step, targets)`` for the given real transitions."""
    xs = [_state_sequence(e.state, p) for e in transitions]
    ys = [_state_target(e.next_state, p.n_points) for e in transitions]
    steps = [np.stack([x[t] for x in xs]) for t in range(p.history)]
    return steps, np.stack(ys)


def train_predictor(p: Predictor, buf: ReplayBuffer, epochs: int, lr: float,
                    batch_size: int | None = None, rng: np.random.Generator | None = None) -> list[float]:
    """Squared-error fit of next-slot visibility; returns the loss seen at each epoch.

    With ``batch_size`` set, each epoch is one minibatch step drawn with ``rng``;
    otherwise each epoch is one full-batch step.
    """
    usable = [e for e in buf if len(e.state.history) >= p.history]
    if not usable:
        raise ValueError(f"buffer holds no transition with {p.history} slots of history")
    full = None
    losses = []
    for _ in range(epochs):
        if batch_size is not None and batch_size < len(usable):
            idx = (rng or np.random.default_rng(0)).choice(len(usable), size=batch_size, replace=False)
            xb, yb = training_pairs([usable[i] for i in idx], p)
        else:
            full = full or training_pairs(usable, p)
            xb, yb = full
        out, tape, pv = _graph(p, xb)
        diff = out.value - yb
        losses.append(float(np.mean(np.sum(diff * diff, axis=1))))
        grads = nn.backward(tape, out, 2.0 * diff / len(yb), pv)
        nn.adam_update(p.params, grads, p.opt, lr)
    return losses


def predict_points(p: Predictor, records, frames_per_slot: int, detect_prob: float,
                   rng: np.random.Generator) -> list[frozenset]:
    """Point sets for the next slot's frames.

    The predicted view keeps points with probability strictly above one half;
    each frame then keeps each of those points with chance ``detect_prob``.
    """
    return thin_view(predict_probabilities(p, records, frames_per_slot), frames_per_slot, detect_prob, rng)


def thin_view(probs: np.ndarray, frames_per_slot: int, detect_prob: float,
              rng: np.random.Generator) -> list[frozenset]:
    view = np.flatnonzero(probs > 0.5)
    out = []
    for _ in range(frames_per_slot):
        keep = rng.random(len(view)) < detect_prob
        out.append(frozenset(view[keep].tolist()))
    return out


class LearnedVisibility:
    """Adapter turning a Predictor into a next-batch generator."""

    def __init__(self, p: Predictor):
        self.p = p

    def next_batch(self, s: EnvState, rng: np.random.Generator) -> FrameBatch:
        cfg = s.cfg
        probs = _forward(self.p, _state_sequence(s, self.p))
        sets = thin_view(probs, cfg.frames_per_slot, cfg.visibility.detect_prob, rng)
        raw = [Frame(s.next_frame_id + i, s.slot + 1, pts) for i, pts in enumerate(sets)]
        return tag_keyframes(raw, cfg.jaccard_threshold, s.slot + 1)


class OraclePredictor:
    """Ground-truth next batches keyed by the slot they belong to."""

    def __init__(self, batches: dict | None = None):
        self.batches = dict(batches or {})

    def record(self, batch: FrameBatch) -> None:
        self.batches[batch.slot] = batch

    def next_batch(self, s: EnvState, rng: np.random.Generator) -> FrameBatch:
        return self.batches[s.slot + 1]


def as_visibility(p):
    return LearnedVisibility(p) if isinstance(p, Predictor) else p


# ---------------------------------------------------------------------------
# emulation


def emulate_step(s: EnvState, a: MapAction, p, m: ch.ChannelModel, rng: np.random.Generator,
                 scores=None) -> Experience:
    """An artificial transition: real map update, predicted frames, modelled channel.

    Draw order on ``rng``: frame prediction first, then the channel.
    """
    g_next = apply_action(s, a)
    batch = as_visibility(p).next_batch(s, rng)
    chan = ch.next_state(s.channel, m, rng)
    r = reward(g_next, batch.keyframes, s.cfg.uncertainty_params, s.penalty)
    return Experience(s, a, r, advance(s, g_next, batch, chan), Kind.ARTIFICIAL, scores)


def generate_artificial(buf_a: ReplayBuffer, real: ReplayBuffer, policy: Callable, count: int,
                        p, rng: np.random.Generator, window: int = SEED_WINDOW,
                        min_history: int = 0) -> int:
    """Emulate ``count`` transitions from recent real states; returns how many were stored.

    ``policy(state, rng)`` returns ``(MapAction, scores)``.  Failed draws are
    retried up to the resample cap, then that experience is skipped.
    """
    seeds = [e.state for e in real.recent(window) if len(e.state.history) >= min_history]
    stored = 0
    if not seeds:
        return 0
    for _ in range(count):
        for _attempt in range(MAX_RESAMPLES):
            s = seeds[int(rng.integers(len(seeds)))]
            a, sc = policy(s, rng)
            try:
                e = emulate_step(s, a, p, s.cfg.channel, rng, sc)
            except ValueError:
                continue
            buf_a.store(e)
            stored += 1
            break
    return stored


@dataclass
class DigitalTwin:
    predictor: Predictor
    real: ReplayBuffer
    artificial: ReplayBuffer
    lr: float = 0.01
    fit_steps: int = 1
    fit_batch: int = 32

    @classmethod
    def create(cls, cfg: EnvConfig, rng: np.random.Generator, hidden: int = 32, lr: float = 0.01,
               real_capacity: int = REAL_CAPACITY,
               artificial_capacity: int = ARTIFICIAL_CAPACITY) -> "DigitalTwin":
        p = Predictor.create(cfg.n_points, max(cfg.history, 1), hidden, rng)
        return cls(p, ReplayBuffer(real_capacity, Kind.REAL),
                   ReplayBuffer(artificial_capacity, Kind.ARTIFICIAL), lr)

    def ready(self) -> bool:
        return any(len(e.state.history) >= self.predictor.history for e in self.real.recent(SEED_WINDOW))


# ---------------------------------------------------------------------------
# snapshots


def _frame_ref(f: Frame, table: dict) -> int:
    # predicted frames of different artificial experiences may share an id,
    # so frames are interned by content rather than by id
    key = (f.frame_id, f.slot, f.is_keyframe, f.points)
    if key not in table:
        table[key] = len(table)
    return table[key]


def _state_dict(s: EnvState, table: dict) -> dict:
    hist = [{"graph": [_frame_ref(f, table) for f in rec.graph.frames()], "slot": rec.batch.slot,
             "batch": [_frame_ref(f, table) for f in rec.batch.frames], "channel": int(rec.channel)}
            for rec in s.history]
    return {"slot": s.slot, "budget": s.budget, "penalty": s.penalty,
            "next_frame_id": s.next_frame_id, "history": hist}


def _state_from(d: dict, frames: list, cfg: EnvConfig) -> EnvState:
    hist = tuple(SlotRecord(CovisibilityGraph.from_frames(frames[i] for i in h["graph"]),
                            FrameBatch(h["slot"], tuple(frames[i] for i in h["batch"])),
                            ch.ChannelState(h["channel"]))
                 for h in d["history"])
    return EnvState(d["slot"], hist, d["budget"], d["penalty"], cfg, d["next_frame_id"])


def save_buffer(path, buf: ReplayBuffer) -> None:
    """``<path>.json`` holds frames and transitions, ``<path>.npz`` rewards and scores."""
    path = Path(path)
    table: dict = {}
    items, scores, offsets = [], [], [0]
    for e in buf:
        vec = e.scores.vector() if e.scores is not None else np.zeros(0)
        items.append({"state": _state_dict(e.state, table), "next": _state_dict(e.next_state, table),
                      "upload": sorted(e.action.upload), "evict": sorted(e.action.evict),
                      "n_evict_scores": None if e.scores is None else len(e.scores.evict_scores)})
        scores.append(vec)
        offsets.append(offsets[-1] + len(vec))
    meta = {"version": SNAPSHOT_VERSION, "kind": buf.kind.value, "capacity": buf.capacity,
            "inserted": buf.inserted,
            "frames": [[fid, slot, int(kf), sorted(pts)] for fid, slot, kf, pts in table],
            "items": items}
    np.savez(path.with_suffix(".npz"), reward=np.array([e.reward for e in buf], dtype=float),
             scores=np.concatenate(scores) if scores else np.zeros(0), offsets=np.array(offsets))
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))


def load_buffer(path, cfg: EnvConfig) -> ReplayBuffer:
    from .agent.actor_critic import ScoreAction
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported buffer snapshot version {meta.get('version')}")
    frames = [Frame(fid, slot, frozenset(pts), bool(kf)) for fid, slot, kf, pts in meta["frames"]]
    with np.load(path.with_suffix(".npz")) as blob:
        rewards, flat, offsets = blob["reward"], blob["scores"], blob["offsets"]
    if len(rewards) != len(meta["items"]):
        raise ValueError("snapshot blob and sidecar disagree on the number of experiences")
    kind = Kind(meta["kind"])
    buf = ReplayBuffer(meta["capacity"], kind)
    for i, it in enumerate(meta["items"]):
        sc = None
        if it["n_evict_scores"] is not None:
            vec = flat[offsets[i]:offsets[i + 1]]
            k = it["n_evict_scores"]
            sc = ScoreAction(vec[k:].copy(), vec[:k].copy())
        buf.store(Experience(_state_from(it["state"], frames, cfg), MapAction(it["upload"], it["evict"]),
                             float(rewards[i]), _state_from(it["next"], frames, cfg), kind, sc))
    buf.inserted = meta["inserted"]
    return buf
