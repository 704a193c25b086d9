"""Action construction and the non-learned map-management policies.

Every policy here returns a feasible MapAction by construction: uploads are
admitted only if they attach to the map, and evictions skip cut vertices.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..covis import add_frame, cut_vertices, remove_frames
from ..env import EnvState, MapAction, feasible

BRUTE_MAX_FRAMES = 8
BRUTE_MAX_CAPACITY = 6


def select_uploads(s: EnvState, order, limit: int) -> list[int]:
    """Take frames in priority order, skipping any that would not touch the map.

    A skipped frame is reconsidered once a later pick gives it an anchor.
    """
    limit = min(limit, s.budget)
    batch = {f.frame_id: f for f in s.batch.frames}
    pool_mask = 0
    for f in s.graph.frames():
        pool_mask |= f.mask
    chosen: list[int] = []
    pending = [fid for fid in order if fid in batch]
    progress = True
    while progress and len(chosen) < limit:
        progress = False
        rest = []
        for fid in pending:
            if len(chosen) >= limit:
                break
            f = batch[fid]
            if f.mask & pool_mask:
                chosen.append(fid)
                pool_mask |= f.mask
                progress = True
            else:
                rest.append(fid)
        pending = rest
    return chosen


def evict_to_capacity(s: EnvState, uploads, order) -> list[int]:
    """Drop frames in priority order, skipping cut vertices, until size fits.

    ``order`` ranks removal preference over the whole pool; frames not in it
    are only touched once it is exhausted.
    """
    g = s.graph
    for fid in uploads:
        g = add_frame(g, s.batch.frame(fid))
    need = len(g) - s.cfg.capacity
    evicted: list[int] = []
    while need > 0:
        cuts = cut_vertices(g)
        ranked = list(order) + [fid for fid in g.frame_ids() if fid not in set(order)]
        for fid in ranked:
            if fid in g and fid not in cuts:
                break
        else:
            raise RuntimeError("no removable frame; map is not connected")
        g = remove_frames(g, [fid])
        evicted.append(fid)
        need -= 1
    return evicted


def build_action(s: EnvState, upload_order, evict_order, limit: int | None = None) -> MapAction:
    up = select_uploads(s, upload_order, s.budget if limit is None else limit)
    ev = evict_to_capacity(s, up, evict_order)
    return MapAction(frozenset(up), frozenset(ev))


def decode_action(s: EnvState, upload_scores, evict_scores) -> MapAction:
    """Top-budget candidates by score; evict the lowest-scored stored frames.

    Ties go to the lower frame id.  Stored frames are evicted before any upload.
    """
    cands = s.batch.frame_ids()
    stored = s.graph.frame_ids()
    upload_scores = np.asarray(upload_scores, float)
    evict_scores = np.asarray(evict_scores, float)
    if upload_scores.shape != (len(cands),) or evict_scores.shape != (len(stored),):
        raise ValueError("score vectors must match candidate and stored counts")
    up_order = [cands[i] for i in sorted(range(len(cands)), key=lambda i: (-upload_scores[i], cands[i]))]
    ev_order = [stored[i] for i in sorted(range(len(stored)), key=lambda i: (evict_scores[i], stored[i]))]
    up = select_uploads(s, up_order, s.budget)
    # uploads, if they must go, leave lowest-score first
    ev_order += sorted(up, key=lambda fid: (upload_scores[cands.index(fid)], fid))
    ev = evict_to_capacity(s, up, ev_order)
    return MapAction(frozenset(up), frozenset(ev))


def _oldest_first(s: EnvState, uploads) -> list[int]:
    frames = s.graph.frames() + [s.batch.frame(fid) for fid in uploads]
    return [f.frame_id for f in sorted(frames, key=lambda f: (f.slot, f.frame_id))]


def baseline_lff(s: EnvState) -> MapAction:
    """Latest keyframes first; evict the oldest captures."""
    keys = [f.frame_id for f in reversed(s.batch.frames) if f.is_keyframe]
    up = select_uploads(s, keys, s.budget)
    return MapAction(frozenset(up), frozenset(evict_to_capacity(s, up, _oldest_first(s, up))))


def pu_indices(n_frames: int, b: int) -> list[int]:
    if b <= 0:
        return []
    b = min(b, n_frames)
    return [k * n_frames // b for k in range(b)]


def baseline_pu(s: EnvState) -> MapAction:
    """Evenly spaced frames of the slot; evict the oldest captures."""
    frames = s.batch.frames
    picks = [frames[i].frame_id for i in pu_indices(len(frames), s.budget)]
    up = select_uploads(s, picks, s.budget)
    return MapAction(frozenset(up), frozenset(evict_to_capacity(s, up, _oldest_first(s, up))))


def random_action(s: EnvState, rng: np.random.Generator) -> MapAction:
    """Uniform upload count and order; evictions uniform over removable frames."""
    cands = s.batch.frame_ids()
    k = int(rng.integers(0, min(s.budget, len(cands)) + 1))
    order = [cands[i] for i in rng.permutation(len(cands))]
    up = select_uploads(s, order, k)
    stored = s.graph.frame_ids()
    ev_order = [stored[i] for i in rng.permutation(len(stored))]
    ev_order += [up[i] for i in rng.permutation(len(up))]
    return MapAction(frozenset(up), frozenset(evict_to_capacity(s, up, ev_order)))


# ---------------------------------------------------------------------------
# one-slot optimisation with the next keyframes revealed


class SlotEvaluator:
    """Batched reward of candidate maps built from a fixed pool of frames.

    For a map G and keyframe f, anchoring the reduced Laplacian of G u {f} at f
    leaves L(G) + diag(overlap(f, .)), so no graph objects are needed.
    """

    def __init__(self, s: EnvState, keyframes):
        self.s = s
        self.pool = s.graph.frames() + list(s.batch.frames)
        self.index = {f.frame_id: i for i, f in enumerate(self.pool)}
        n = len(self.pool)
        w = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                w[i, j] = w[j, i] = (self.pool[i].mask & self.pool[j].mask).bit_count()
        self.w = w
        self.keyframes = list(keyframes)
        self.c = np.array([[(k.mask & f.mask).bit_count() for f in self.pool] for k in self.keyframes],
                          dtype=float).reshape(len(self.keyframes), n)
        self.penalty = s.penalty
        self.log_kappa = math.log(s.cfg.pi_scale)

    def rewards(self, maps) -> np.ndarray:
        """Reward of each map (a list of frame ids); all maps must share a size."""
        if not maps:
            return np.zeros(0)
        if not self.keyframes:
            return np.full(len(maps), -self.penalty)
        idx = np.array([[self.index[fid] for fid in m] for m in maps])
        n = idx.shape[1]
        sub = self.w[idx[:, :, None], idx[:, None, :]]
        lap = np.zeros_like(sub)
        diag = sub.sum(axis=2)
        lap -= sub
        lap[:, np.arange(n), np.arange(n)] += diag
        cs = self.c[:, idx].transpose(1, 0, 2)                   # (maps, keys, n)
        mats = lap[:, None, :, :] + cs[..., :, None] * np.eye(n)
        sign, logdet = np.linalg.slogdet(mats)
        # integer weights: connected => det >= 1, disconnected => det == 0
        ok = (sign > 0) & (logdet > math.log(0.5))
        u = -6.0 * logdet - 6.0 * n * self.log_kappa
        u = np.where(ok, np.minimum(u, self.penalty), self.penalty)
        return -u.mean(axis=1)

    def reward(self, m) -> float:
        return float(self.rewards([list(m)])[0])


def _final_map(s: EnvState, a: MapAction) -> list[int]:
    return sorted((set(s.graph.frame_ids()) | a.upload) - a.evict)


def greedy_one_slot(s: EnvState, keyframes) -> MapAction:
    """Marginal-gain uploads, then least-damaging connectivity-safe evictions."""
    ev = SlotEvaluator(s, keyframes)
    current = s.graph
    uploads: list[int] = []
    base = ev.reward(current.frame_ids())
    while len(uploads) < s.budget:
        options = [f for f in s.batch.frames
                   if f.frame_id not in uploads and any(f.mask & g.mask for g in current.frames())]
        if not options:
            break
        ids = current.frame_ids()
        vals = ev.rewards([ids + [f.frame_id] for f in options])
        best = int(np.argmax(vals))
        if vals[best] - base <= 0:
            break
        uploads.append(options[best].frame_id)
        current = add_frame(current, options[best])
        base = float(vals[best])
    evicted: list[int] = []
    stored = set(s.graph.frame_ids())
    while len(current) > s.cfg.capacity:
        cuts = cut_vertices(current)
        ids = current.frame_ids()
        removable = [fid for fid in ids if fid not in cuts]
        # previously stored frames go first, uploads only if nothing else can
        preferred = [fid for fid in removable if fid in stored] or removable
        maps = [[x for x in ids if x != fid] for fid in preferred]
        vals = ev.rewards(maps)
        best = int(np.argmax(vals))
        current = remove_frames(current, [preferred[best]])
        evicted.append(preferred[best])
    return MapAction(frozenset(uploads), frozenset(evicted))


def bruteforce_one_slot(s: EnvState, keyframes) -> tuple[MapAction, float]:
    """Exhaustive search over reachable post-update maps.

    The reward depends only on the resulting frame set, so each reachable set
    is scored once and reported with its smallest admissible action.
    """
    frames = s.batch.frames
    stored = s.graph.frame_ids()
    if len(frames) > BRUTE_MAX_FRAMES or s.cfg.capacity > BRUTE_MAX_CAPACITY:
        raise ValueError(f"brute force capped at |F_t| <= {BRUTE_MAX_FRAMES}, D <= {BRUTE_MAX_CAPACITY}")
    ev = SlotEvaluator(s, keyframes)
    cand_ids = [f.frame_id for f in frames]
    actions: list[MapAction] = []
    for k in range(0, min(s.budget, len(cand_ids)) + 1):
        keep_stored = min(s.cfg.capacity, len(stored) + k) - k
        if keep_stored < 0:
            continue
        for up in itertools.combinations(cand_ids, k):
            # uploads evicted again are dominated by not uploading them
            for kept in itertools.combinations(stored, keep_stored):
                a = MapAction(frozenset(up), frozenset(stored) - frozenset(kept))
                if feasible(s, a) is None:
                    actions.append(a)
    if not actions:
        raise RuntimeError("no feasible action")
    by_size: dict[int, list[MapAction]] = {}
    for a in actions:
        by_size.setdefault(len(_final_map(s, a)), []).append(a)
    best_a, best_r = None, -math.inf
    for size in sorted(by_size):
        group = by_size[size]
        vals = ev.rewards([_final_map(s, a) for a in group])
        i = int(np.argmax(vals))
        if vals[i] > best_r:
            best_a, best_r = group[i], float(vals[i])
    return best_a, best_r
