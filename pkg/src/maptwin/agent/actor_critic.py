"""Score-vector actor and selection-aware critic over the co-visibility graph.

The actor emits one score per node of the union graph (stored frames plus
the slot's candidates).  The critic splits Q into a state value and a sum of
per-node advantages, each weighted by a smooth stand-in for "this node ends
up uploaded" (candidates) or "this node gets evicted" (stored frames).  The
weights come from score margins around the top-B cut, so Q stays
differentiable in the scores for the deterministic policy gradient.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .. import nn
from ..env import N_GLOBAL_FEATURES, N_NODE_FEATURES, EnvState, encode_features


@dataclass(frozen=True)
class NetConfig:
    gcn: tuple = (16, 8)
    actor_head: tuple = (16,)
    critic_head: tuple = (32,)
    advantage_head: tuple = (16,)
    temperature: float = 0.1


@dataclass(frozen=True)
class ScoreAction:
    upload_scores: np.ndarray
    evict_scores: np.ndarray

    def vector(self) -> np.ndarray:
        """Scores in node order: stored frames first, then candidates."""
        return np.concatenate([self.evict_scores, self.upload_scores])


def _stack(n_in, widths, kind, last_activation=None):
    layers, d = [], n_in
    for i, w in enumerate(widths):
        act = "tanh" if (last_activation is None or i < len(widths) - 1) else last_activation
        layers.append(nn.Layer(kind, d, w, act))
        d = w
    return nn.NetSpec(layers)


def gcn_spec(cfg: NetConfig) -> nn.NetSpec:
    return _stack(N_NODE_FEATURES + N_GLOBAL_FEATURES, cfg.gcn, "graphconv")


def actor_head_spec(cfg: NetConfig) -> nn.NetSpec:
    n_in = cfg.gcn[-1] + N_NODE_FEATURES + N_GLOBAL_FEATURES
    return _stack(n_in, cfg.actor_head + (1,), "dense", last_activation="tanh")


def node_repr_dim(cfg: NetConfig) -> int:
    return cfg.gcn[-1] + N_NODE_FEATURES + N_GLOBAL_FEATURES


def critic_head_spec(cfg: NetConfig) -> nn.NetSpec:
    n_in = 2 * node_repr_dim(cfg) + N_GLOBAL_FEATURES
    return _stack(n_in, cfg.critic_head + (1,), "dense", last_activation="linear")


def advantage_spec(cfg: NetConfig) -> nn.NetSpec:
    return _stack(node_repr_dim(cfg), cfg.advantage_head + (1,), "dense", last_activation="linear")


@dataclass(eq=False)
class GraphBatch:
    """Several states packed as one block-diagonal graph."""
    x: np.ndarray
    node_globals: np.ndarray
    adj: np.ndarray
    globals: np.ndarray
    seg_stored: np.ndarray      # (B, n) indicator rows
    seg_cand: np.ndarray
    offsets: list
    n_stored: list
    budget: list
    capacity: int

    @property
    def size(self) -> int:
        return len(self.offsets)

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.x, self.node_globals], axis=1)


def _block_diag_csr(blocks, offsets, n) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for a, off in zip(blocks, offsets):
        r, c = np.nonzero(a)
        rows.append(r + off)
        cols.append(c + off)
        vals.append(a[r, c])
    if not rows:
        return sparse.csr_matrix((n, n))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def make_batch(states) -> GraphBatch:
    feats = [encode_features(s) for s in states]
    sizes = [len(f.node_ids) for f in feats]
    n = sum(sizes)
    offsets = list(np.cumsum([0] + sizes[:-1]))
    seg_s = np.zeros((len(feats), n))
    seg_c = np.zeros((len(feats), n))
    node_g = np.zeros((n, N_GLOBAL_FEATURES))
    for b, (f, off, sz) in enumerate(zip(feats, offsets, sizes)):
        seg_s[b, off:off + f.n_stored] = 1
        seg_c[b, off + f.n_stored:off + sz] = 1
        node_g[off:off + sz] = f.globals
    adj = _block_diag_csr([f.adj for f in feats], offsets, n)
    return GraphBatch(np.concatenate([f.x for f in feats]), node_g, adj,
                      np.stack([f.globals for f in feats]), seg_s, seg_c, offsets,
                      [f.n_stored for f in feats], [s.budget for s in states],
                      states[0].cfg.capacity if states else 0)


def actor_forward(cfg: NetConfig, pv: dict, gb: GraphBatch) -> nn.Var:
    tape = next(iter(pv.values())).tape
    inp = tape.const(gb.inputs)
    h = nn.apply(gcn_spec(cfg), pv, inp, gb.adj, prefix="gcn.")
    z = nn.concat([h, inp], axis=1)
    return nn.apply(actor_head_spec(cfg), pv, z, prefix="head.")


def _selection_weights(tape, scores: nn.Var, gb: GraphBatch, temperature: float) -> nn.Var:
    """Relaxed membership of each node in the decoded action.

    Candidates: sigmoid of the margin over the midpoint between the B-th and
    (B+1)-th largest candidate score.  Stored frames: sigmoid of the margin
    below the midpoint between the e-th and (e+1)-th smallest stored score,
    where e is the number of evictions the upload count forces.  Sets that
    are taken whole (or not at all) get a constant weight of one (zero).
    """
    n = scores.shape[0]
    ia = np.arange(n)
    ib = np.arange(n)
    sign = np.zeros((n, 1))
    fixed = np.zeros((n, 1))
    sv = scores.value[:, 0]
    for b in range(gb.size):
        off, k = gb.offsets[b], gb.n_stored[b]
        n_c = int(gb.seg_cand[b].sum())
        cands = np.arange(off + k, off + k + n_c)
        stored = np.arange(off, off + k)
        n_up = min(gb.budget[b], n_c)
        n_ev = max(0, min(k, k + n_up - gb.capacity))
        for nodes, take_n, sgn in ((cands, n_up, 1.0), (stored, n_ev, -1.0)):
            if take_n == 0 or take_n == len(nodes):
                fixed[nodes, 0] = float(take_n == len(nodes) and take_n > 0)
                continue
            order = nodes[np.argsort(-sgn * sv[nodes], kind="stable")]
            ia[nodes], ib[nodes] = order[take_n - 1], order[take_n]
            sign[nodes, 0] = sgn
    thr = (nn.take(scores, ia) + nn.take(scores, ib)) * 0.5
    z = (scores - thr) * (sign / temperature)
    return nn.sigmoid(z) * np.abs(sign) + fixed


def critic_forward(cfg: NetConfig, pv: dict, gb: GraphBatch, scores: nn.Var) -> nn.Var:
    """State value plus selection-weighted per-node advantages."""
    tape = scores.tape
    inp = tape.const(gb.inputs)
    h = nn.apply(gcn_spec(cfg), pv, inp, gb.adj, prefix="gcn.")
    rep = nn.concat([h, inp], axis=1)
    mean_s = nn.matmul(gb.seg_stored / np.maximum(gb.seg_stored.sum(1, keepdims=True), 1), rep)
    mean_c = nn.matmul(gb.seg_cand / np.maximum(gb.seg_cand.sum(1, keepdims=True), 1), rep)
    v = nn.apply(critic_head_spec(cfg), pv, nn.concat([mean_s, mean_c, tape.const(gb.globals)], axis=1),
                 prefix="head.")
    adv = nn.apply(advantage_spec(cfg), pv, rep, prefix="adv.")
    w = _selection_weights(tape, scores, gb, cfg.temperature)
    return v + nn.matmul(gb.seg_stored + gb.seg_cand, w * adv)


def init_actor(cfg: NetConfig, rng: np.random.Generator) -> dict:
    p = nn.init_params(gcn_spec(cfg), rng, "gcn.")
    p.update(nn.init_params(actor_head_spec(cfg), rng, "head."))
    return p


def init_critic(cfg: NetConfig, rng: np.random.Generator) -> dict:
    p = nn.init_params(gcn_spec(cfg), rng, "gcn.")
    p.update(nn.init_params(critic_head_spec(cfg), rng, "head."))
    p.update(nn.init_params(advantage_spec(cfg), rng, "adv."))
    return p


def _vars(tape: nn.Tape, params: dict) -> dict:
    return {k: tape.var(v) for k, v in params.items()}


def split_scores(gb: GraphBatch, flat: np.ndarray, b: int) -> ScoreAction:
    off, k = gb.offsets[b], gb.n_stored[b]
    end = off + int(gb.seg_cand[b].sum()) + k
    return ScoreAction(flat[off + k:end].copy(), flat[off:off + k].copy())


def actor_scores(cfg: NetConfig, params: dict, states, gb: GraphBatch | None = None) -> list[ScoreAction]:
    gb = make_batch(states) if gb is None else gb
    tape = nn.Tape()
    out = actor_forward(cfg, _vars(tape, params), gb).value[:, 0]
    return [split_scores(gb, out, b) for b in range(gb.size)]


def critic_values(cfg: NetConfig, params: dict, states, scores, gb: GraphBatch | None = None) -> np.ndarray:
    gb = make_batch(states) if gb is None else gb
    tape = nn.Tape()
    sv = tape.const(np.concatenate([s.vector() for s in scores])[:, None])
    return critic_forward(cfg, _vars(tape, params), gb, sv).value[:, 0]


@dataclass(frozen=True)
class LearnerConfig:
    actor_lr: float = 1e-3
    critic_lr: float = 2e-3
    tau: float = 0.01
    reward_scale: float = 100.0
    grad_clip: float = 5.0


@dataclass
class ActorCritic:
    """Live and target parameter stores plus optimiser state."""
    net: NetConfig
    learn: LearnerConfig
    actor: dict
    critic: dict
    actor_target: dict
    critic_target: dict
    actor_opt: nn.AdamState = field(default_factory=nn.AdamState)
    critic_opt: nn.AdamState = field(default_factory=nn.AdamState)

    @classmethod
    def create(cls, rng: np.random.Generator, net: NetConfig = NetConfig(),
               learn: LearnerConfig = LearnerConfig()) -> "ActorCritic":
        a = init_actor(net, rng)
        c = init_critic(net, rng)
        return cls(net, learn, a, c, copy.deepcopy(a), copy.deepcopy(c))

    def frozen_copy(self) -> "ActorCritic":
        return copy.deepcopy(self)


def act(ac: ActorCritic, s: EnvState, sigma: float, rng: np.random.Generator | None) -> ScoreAction:
    sc = actor_scores(ac.net, ac.actor, [s])[0]
    if sigma > 0:
        noise = rng.normal(0.0, sigma, size=len(sc.evict_scores) + len(sc.upload_scores))
        k = len(sc.evict_scores)
        sc = ScoreAction(sc.upload_scores + noise[k:], sc.evict_scores + noise[:k])
    return sc


def critic_value(ac: ActorCritic, s: EnvState, sc: ScoreAction) -> float:
    return float(critic_values(ac.net, ac.critic, [s], [sc])[0])


def critic_score_gradient(ac: ActorCritic, s: EnvState, sc: ScoreAction) -> np.ndarray:
    """dQ/dscores in node order (stored first)."""
    gb = make_batch([s])
    tape = nn.Tape()
    sv = tape.var(sc.vector()[:, None])
    q = critic_forward(ac.net, _vars(tape, ac.critic), gb, sv)
    tape.backward(q, np.ones_like(q.value))
    return sv.grad[:, 0]


def critic_update(ac: ActorCritic, batch, gamma: float, lr: float | None = None,
                  gb: GraphBatch | None = None) -> float:
    """One step on the squared TD error; the target bootstraps from the next state."""
    if not batch:
        raise ValueError("critic_update needs a non-empty batch")
    lr = ac.learn.critic_lr if lr is None else lr
    nxt = [e.next_state for e in batch]
    nb = make_batch(nxt)
    q_next = critic_values(ac.net, ac.critic_target, nxt, actor_scores(ac.net, ac.actor_target, nxt, nb), nb)
    r = np.array([e.reward for e in batch]) / ac.learn.reward_scale
    y = r + gamma * q_next
    gb = make_batch([e.state for e in batch]) if gb is None else gb
    tape = nn.Tape()
    pv = _vars(tape, ac.critic)
    sv = tape.const(np.concatenate([e.scores.vector() for e in batch])[:, None])
    q = critic_forward(ac.net, pv, gb, sv)
    diff = q - y[:, None]
    loss = nn.mean(diff * diff)
    tape.backward(loss)
    grads = nn.clip_grads({k: v.grad for k, v in pv.items()}, ac.learn.grad_clip)
    nn.adam_update(ac.critic, grads, ac.critic_opt, lr)
    return float(loss.value)


def actor_gradient(ac: ActorCritic, states, gb: GraphBatch | None = None) -> tuple[dict, float]:
    """Gradient of mean Q(o, pi(o)) w.r.t. the actor parameters, and that mean."""
    gb = make_batch(states) if gb is None else gb
    tape = nn.Tape()
    pa = _vars(tape, ac.actor)
    pc = _vars(tape, ac.critic)
    scores = actor_forward(ac.net, pa, gb)
    q = critic_forward(ac.net, pc, gb, scores)
    obj = nn.mean(q)
    tape.backward(obj)
    return {k: v.grad for k, v in pa.items()}, float(obj.value)


def actor_update(ac: ActorCritic, states, lr: float | None = None, gb: GraphBatch | None = None) -> float:
    if not states:
        raise ValueError("actor_update needs a non-empty batch")
    lr = ac.learn.actor_lr if lr is None else lr
    grads, obj = actor_gradient(ac, states, gb)
    # ascent: hand Adam the negated gradient
    grads = nn.clip_grads({k: -g for k, g in grads.items()}, ac.learn.grad_clip)
    nn.adam_update(ac.actor, grads, ac.actor_opt, lr)
    return obj


def soft_update_targets(ac: ActorCritic) -> None:
    nn.soft_update(ac.actor_target, ac.actor, ac.learn.tau)
    nn.soft_update(ac.critic_target, ac.critic, ac.learn.tau)
