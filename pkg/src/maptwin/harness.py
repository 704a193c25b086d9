"""Experiment orchestration: scheme rollouts, the rate sweep, convergence curves, oracle suites.

Seeds index scenes.  Trajectories are drawn from disjoint seed ranges so that
training, evaluation and the convergence runs never share a walk:

    training episode e of seed s   -> TRAIN_TRAJ + 1000*s + e
    evaluation episode k of seed s -> EVAL_TRAJ + 1000*s + k
    convergence run of seed s      -> CONV_TRAJ + s

Results are merged by a (scheme, ratio, seed, episode) sort, so the worker
count never changes an emitted byte.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import channel as ch
from . import nn
from .agent import actor_critic as acm
from .agent.amm import AmmConfig, amm_train, episode_curve, policy_action, train_model_free
from .agent.policies import (SlotEvaluator, baseline_lff, baseline_pu, bruteforce_one_slot,
                             greedy_one_slot, random_action)
from .covis import (CovisibilityGraph, Frame, UncertaintyParams, log_det_spd, reduced_laplacian,
                    spanning_tree_weight, uncertainty, uncertainty_direct)
from .env import ConstraintMonitor, EnvConfig, MapAction, MapEnv, apply_action, desk_preset, table1_preset
from .scene import make_slot_frames
from .twin import DigitalTwin

SCHEMES = ("amm", "lff", "pu", "random", "greedy")
TRAIN_TRAJ, EVAL_TRAJ, CONV_TRAJ = 100_000, 200_000, 300_000
PRESETS = {"desk": desk_preset, "table1": table1_preset}


@dataclass(frozen=True)
class SweepSpec:
    ratios: tuple = (0.2, 0.5, 0.8)
    mixing: float = 0.2

    def __post_init__(self):
        if not self.ratios:
            raise ValueError("sweep needs at least one ratio")
        for r in self.ratios:
            ch.sweep_probabilities(r, self.mixing)     # raises on r outside (0, 1)

    def channel(self, base: ch.ChannelModel, ratio: float) -> ch.ChannelModel:
        p_hl, p_lh = ch.sweep_probabilities(ratio, self.mixing)
        return replace(base, p_hl=p_hl, p_lh=p_lh)


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=desk_preset)
    amm: AmmConfig = field(default_factory=lambda: AmmConfig(gamma=0.2, episodes=14))
    sweep: SweepSpec = field(default_factory=SweepSpec)
    seeds: tuple = tuple(range(10))
    out: Path | None = None
    eval_episodes: int = 1
    n_values: tuple = (0, 5)
    twin_hidden: int = 32
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if any(n < 0 for n in self.n_values):
            raise ValueError("N values must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class MetricsRow:
    scheme: str
    ratio: float
    seed: int
    episode: int
    mean_uncertainty: float
    mean_reward: float
    violations: int
    training: dict | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        if d["training"] is None:
            del d["training"]
        return d

    @property
    def key(self):
        return (self.scheme, self.ratio, self.seed, self.episode)


# ---------------------------------------------------------------------------
# config files


_NUM = {"type": "number"}
_INT = {"type": "integer"}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": sorted(PRESETS)},
        "env": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "capacity": {"type": "integer", "minimum": 2},
                "frames_per_slot": {"type": "integer", "minimum": 1},
                "history": {"type": "integer", "minimum": 0},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "episode_slots": {"type": "integer", "minimum": 0},
                "n_points": {"type": "integer", "minimum": 1},
                "jaccard_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "pi_scale": {"type": "number", "exclusiveMinimum": 0},
                "penalty_factor": {"type": "number", "exclusiveMinimum": 0},
                "seed": _INT,
                "channel": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _NUM for k in ("r_high", "r_low", "p_hl", "p_lh",
                                                     "frame_bits", "slot_seconds")},
                },
            },
        },
        "amm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_artificial": {"type": "integer", "minimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "actor_lr": _NUM, "critic_lr": _NUM, "sigma_start": _NUM, "sigma_end": _NUM,
                "tau": _NUM, "reward_scale": _NUM,
                "episodes": {"type": "integer", "minimum": 0},
                "artificial_per_slot": {"type": "integer", "minimum": 0},
                "predictor_fit_steps": {"type": "integer", "minimum": 0},
                "actor_delay": {"type": "integer", "minimum": 0},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ratios": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                "mixing": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "seeds": {"type": "array", "minItems": 1, "uniqueItems": True, "items": _INT},
        "out": {"type": "string"},
        "eval_episodes": {"type": "integer", "minimum": 1},
        "n_values": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "twin_hidden": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
    },
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` against CONFIG_SCHEMA and build the config it describes."""
    jsonschema.validate(raw, CONFIG_SCHEMA)
    env_raw = dict(raw.get("env", {}))
    chan = env_raw.pop("channel", None)
    env = PRESETS[raw.get("preset", "desk")](**env_raw)
    if chan:
        env = replace(env, channel=replace(env.channel, **chan))
    base = ExperimentConfig()
    return ExperimentConfig(
        env=env,
        amm=replace(base.amm, **raw.get("amm", {})),
        sweep=replace(base.sweep, **{k: tuple(v) if k == "ratios" else v
                                     for k, v in raw.get("sweep", {}).items()}),
        seeds=tuple(raw.get("seeds", base.seeds)),
        out=Path(raw["out"]) if "out" in raw else None,
        eval_episodes=raw.get("eval_episodes", base.eval_episodes),
        n_values=tuple(raw.get("n_values", base.n_values)),
        twin_hidden=raw.get("twin_hidden", base.twin_hidden),
        workers=raw.get("workers", base.workers),
    )


def load_config(path) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# rollouts


def peek_keyframes(env: MapEnv) -> tuple:
    """Keyframes of the slot the next step will capture, without consuming any draw."""
    s = env.state
    batch, _ = make_slot_frames(env.scene, env.pose, env.cfg.slot_config, s.slot + 1, s.next_frame_id,
                                copy.deepcopy(env.walk_rng), copy.deepcopy(env.vis_rng))
    return batch.keyframes


def scheme_policy(scheme: str, env: MapEnv, rng: np.random.Generator, ac=None):
    """A callable ``state -> MapAction`` for the named scheme."""
    if scheme == "lff":
        return baseline_lff
    if scheme == "pu":
        return baseline_pu
    if scheme == "random":
        return lambda s: random_action(s, rng)
    if scheme == "greedy":
        return lambda s: greedy_one_slot(s, peek_keyframes(env))
    if scheme == "amm":
        if ac is None:
            raise ValueError("the amm scheme needs trained networks")
        return lambda s: policy_action(ac, s)[0]
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def rollout(env: MapEnv, policy, trajectory_seed: int, monitor: ConstraintMonitor,
            log: list | None = None) -> list[float]:
    """One episode; every applied action passes through ``monitor``. Returns the rewards."""
    s = env.reset(trajectory_seed)
    rewards = []
    done = env.cfg.episode_slots == 0
    while not done:
        a = policy(s)
        monitor.check(s, a, apply_action(s, a))
        s2, r, done = env.step(a)
        rewards.append(r)
        if log is not None:
            log.append({"slot": s.slot, "channel": s.channel.name, "budget": s.budget,
                        "upload": len(a.upload), "evict": len(a.evict), "map_size": len(s2.graph),
                        "reward": r})
        s = s2
    return rewards


def _twin_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 99])


def train_scheme(cfg: ExperimentConfig, seed: int, channels: list) -> tuple:
    """AMM trained on seed ``seed``'s scene, cycling trajectories and the given channels."""
    env_cfg = replace(cfg.env, seed=seed)
    amm = replace(cfg.amm, seed=seed)

    def plan(ep):
        return TRAIN_TRAJ + 1000 * seed + ep, channels[ep % len(channels)]

    twin = DigitalTwin.create(env_cfg, _twin_rng(seed), hidden=cfg.twin_hidden) if amm.n_artificial else None
    ac, log = amm_train(MapEnv(env_cfg), twin, amm, plan)
    return ac, log


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")


def generate_trace(cfg: EnvConfig, trajectory_seed: int, slots: int) -> list:
    """Frame batches of one walk: the decision slots 1..``slots`` (the warm-up slot is not included)."""
    env = MapEnv(replace(cfg, episode_slots=slots))
    s = env.reset(trajectory_seed)
    batches = [s.batch]
    for _ in range(slots - 1):
        s, _, _ = env.step(MapAction())
        batches.append(s.batch)
    return batches


def _ratio_of(m: ch.ChannelModel) -> float:
    return round(ch.stationary_high_fraction(m), 12)


def seed_rows(cfg: ExperimentConfig, scheme: str, seed: int, ratios) -> list[MetricsRow]:
    """Evaluate one scheme on one seed at each ratio (``None`` = the configured channel)."""
    channels = [cfg.env.channel if r is None else cfg.sweep.channel(cfg.env.channel, r) for r in ratios]
    ac, training = None, None
    if scheme == "amm":
        ac, log = train_scheme(cfg, seed, channels)
        curve = episode_curve(log)
        training = {"episodes": len(curve), "n_artificial": cfg.amm.n_artificial,
                    "final_train_reward": curve[-1] if curve else None}
    rows = []
    for m in channels:
        env = MapEnv(replace(cfg.env, seed=seed, channel=m))
        rng = np.random.default_rng([seed, 7])
        policy = scheme_policy(scheme, env, rng, ac)
        for k in range(cfg.eval_episodes):
            mon = ConstraintMonitor()
            log = [] if cfg.out is not None else None
            rs = rollout(env, policy, EVAL_TRAJ + 1000 * seed + k, mon, log)
            if log is not None:
                write_jsonl(Path(cfg.out) / "rollouts" / f"{scheme}_r{_ratio_of(m)}_s{seed}_e{k}.jsonl", log)
            mean_r = float(np.mean(rs)) if rs else 0.0
            rows.append(MetricsRow(scheme, _ratio_of(m), seed, k, -mean_r, mean_r, mon.violations,
                                   training))
    return rows


def _map_seeds(cfg: ExperimentConfig, fn, args_list):
    if cfg.workers == 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(fn, *a) for a in args_list]
        return [f.result() for f in futures]


def run_experiment(cfg: ExperimentConfig, scheme: str, ratios=(None,)) -> list[MetricsRow]:
    """Rows for every (seed, ratio, evaluation episode), sorted deterministically."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    jobs = [(cfg, scheme, sd, tuple(ratios)) for sd in cfg.seeds]
    rows = [r for part in _map_seeds(cfg, seed_rows, jobs) for r in part]
    return sorted(rows, key=lambda r: r.key)


def mean_by(rows, *keys) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(getattr(r, k) for k in keys), []).append(r.mean_uncertainty)
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def sweep_high_rate_ratio(cfg: ExperimentConfig, ratios=None, schemes=("amm", "lff", "pu")):
    """``(table, rows)``: table maps (ratio, scheme) to mean uncertainty over seeds and episodes."""
    ratios = tuple(cfg.sweep.ratios if ratios is None else ratios)
    SweepSpec(ratios, cfg.sweep.mixing)
    sweep_cfg = replace(cfg, sweep=SweepSpec(ratios, cfg.sweep.mixing))
    rows = []
    for scheme in schemes:
        rows += run_experiment(sweep_cfg, scheme, ratios)
    rows.sort(key=lambda r: r.key)
    return mean_by(rows, "ratio", "scheme"), rows


def sweep_csv(table: dict) -> str:
    ratios = sorted({r for r, _ in table})
    schemes = sorted({s for _, s in table})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ratio"] + schemes)
    for r in ratios:
        w.writerow([repr(r)] + [repr(table[(r, s)]) for s in schemes])
    return buf.getvalue()


def rows_jsonl(rows) -> str:
    return "".join(json.dumps(r.as_dict(), sort_keys=True) + "\n" for r in rows)


# ---------------------------------------------------------------------------
# convergence


def plateau_reach(curve, window: int = 3, tolerance: float = 0.05) -> int:
    """First episode whose reward is within ``tolerance`` of the mean of the last ``window``."""
    if not curve:
        raise ValueError("empty curve")
    plateau = float(np.mean(curve[-window:]))
    threshold = plateau - tolerance * abs(plateau)
    return next(i for i, v in enumerate(curve) if v >= threshold)


def convergence_env(cfg: ExperimentConfig, seed: int) -> tuple[EnvConfig, object]:
    """Env config and the fixed held-out trajectory plan used for seed ``seed``."""
    env_cfg = replace(cfg.env, seed=seed)
    return env_cfg, (lambda ep: (CONV_TRAJ + seed, None))


def convergence_run(cfg: ExperimentConfig, seed: int, n: int) -> tuple[list[float], list[dict]]:
    env_cfg, plan = convergence_env(cfg, seed)
    amm = replace(cfg.amm, n_artificial=n, seed=seed)
    twin = DigitalTwin.create(env_cfg, _twin_rng(seed), hidden=cfg.twin_hidden)
    _, log = amm_train(MapEnv(env_cfg), twin, amm, plan)
    return episode_curve(log), log


def model_free_run(cfg: ExperimentConfig, seed: int) -> tuple[list[float], list[dict]]:
    """The standalone model-free trainer on the same scene, trajectory and seed."""
    env_cfg, plan = convergence_env(cfg, seed)
    _, log = train_model_free(MapEnv(env_cfg), replace(cfg.amm, n_artificial=0, seed=seed), plan)
    return episode_curve(log), log


def _curve_job(cfg, seed, n):
    return seed, n, convergence_run(cfg, seed, n)[0]


def convergence_study(cfg: ExperimentConfig, n_values=None) -> dict:
    """``{N: {seed: per-episode mean reward}}`` for every N and seed."""
    n_values = tuple(cfg.n_values if n_values is None else n_values)
    jobs = [(cfg, sd, n) for n in n_values for sd in cfg.seeds]
    out: dict = {n: {} for n in n_values}
    for sd, n, curve in _map_seeds(cfg, _curve_job, jobs):
        out[n][sd] = curve
    return {n: dict(sorted(v.items())) for n, v in out.items()}


def curves_jsonl(curves: dict) -> str:
    lines = []
    for n in sorted(curves):
        for sd, curve in curves[n].items():
            for ep, v in enumerate(curve):
                lines.append(json.dumps({"N": n, "seed": sd, "episode": ep, "mean_reward": v},
                                        sort_keys=True))
    return "".join(line + "\n" for line in lines)


def reach_wins(curves: dict, fast: int, slow: int) -> tuple[int, int]:
    """Seeds where N=``fast`` reaches its plateau strictly earlier than N=``slow``."""
    seeds = sorted(curves[fast])
    wins = sum(plateau_reach(curves[fast][sd]) < plateau_reach(curves[slow][sd]) for sd in seeds)
    return wins, len(seeds)


# ---------------------------------------------------------------------------
# plot data


def plot_columns(header, rows) -> str:
    """Whitespace-separated columns with a commented header, as gnuplot reads them."""
    lines = ["# " + " ".join(header)]
    lines += [" ".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def sweep_plot_data(table: dict) -> str:
    schemes = sorted({s for _, s in table})
    ratios = sorted({r for r, _ in table})
    return plot_columns(["ratio"] + schemes, [[r] + [table[(r, s)] for s in schemes] for r in ratios])


def curve_plot_data(curves: dict) -> str:
    """Episode index followed by the seed-mean curve of each N."""
    ns = sorted(curves)
    means = {n: np.mean([c for c in curves[n].values()], axis=0) for n in ns}
    length = min(len(m) for m in means.values()) if means else 0
    return plot_columns(["episode"] + [f"N{n}" for n in ns],
                        [[ep] + [float(means[n][ep]) for n in ns] for ep in range(length)])


# ---------------------------------------------------------------------------
# oracle suites


DEFAULT_COUNTS = {"matrix_tree": 500, "monotonicity": 1000, "kronecker": 100, "gradients": 10,
                  "greedy": 100}
DEFAULT_SIZES = (2, 3, 4, 5, 6)


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    worst: float = 0.0
    seconds: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0


@dataclass
class OracleReport:
    suites: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def suite(self, name: str) -> SuiteResult:
        return next(s for s in self.suites if s.name == name)

    def lines(self) -> list[str]:
        return [f"{'PASS' if s.passed else 'FAIL'} {s.name}: {s.cases} cases, {s.failures} failures, "
                f"worst {s.worst:.3g}, {s.seconds:.2f}s" for s in self.suites]


def random_weighted_graph(n: int, rng: np.random.Generator, max_weight: int = 9) -> CovisibilityGraph:
    """Connected graph on ``n`` nodes with integer weights in [1, max_weight].

    A random spanning tree guarantees connectivity; every other pair is an
    edge with probability one half.  Weights are realised as shared points.
    """
    order = rng.permutation(n)
    edges = {}
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(k)])
        edges[(min(a, b), max(a, b))] = int(rng.integers(1, max_weight + 1))
    for a, b in itertools.combinations(range(n), 2):
        if (a, b) not in edges and rng.random() < 0.5:
            edges[(a, b)] = int(rng.integers(1, max_weight + 1))
    return graph_with_weights(n, edges)


def graph_with_weights(n: int, edges: dict) -> CovisibilityGraph:
    pts = {i: set() for i in range(n)}
    nxt = 0
    for (a, b), w in sorted(edges.items()):
        for _ in range(w):
            pts[a].add(nxt)
            pts[b].add(nxt)
            nxt += 1
    return CovisibilityGraph.from_frames(Frame(i, 0, frozenset(pts[i])) for i in range(n))


def _sizes_cycle(sizes, count):
    return [sizes[i % len(sizes)] for i in range(count)] if sizes else []


def matrix_tree_suite(sizes, count, rng) -> SuiteResult:
    res = SuiteResult("matrix_tree")
    for n in _sizes_cycle(sizes, count):
        g = random_weighted_graph(n, rng)
        want = spanning_tree_weight(g)
        for anchor in g.frame_ids():
            got = math.exp(log_det_spd(reduced_laplacian(g, anchor)))
            err = abs(got - want) / want
            res.worst = max(res.worst, err)
            res.failures += err >= 1e-9
        res.cases += 1
    return res


def monotonicity_suite(sizes, count, rng) -> SuiteResult:
    """Adding a connected node, or a positive edge, must strictly lower u.

    Weights of the added edges are drawn from 1..9 like the base graph.  A
    node hanging off a single unit-weight edge multiplies the spanning-tree
    sum by one, so with kappa = 1 it leaves u unchanged; such cases are
    reported as failures with the edge weights spelled out.
    """
    res = SuiteResult("monotonicity")
    params = UncertaintyParams()
    for i, n in enumerate(_sizes_cycle(sizes, count)):
        g = random_weighted_graph(n, rng)
        u = uncertainty(g, params)
        edges = g.edges
        if i % 2 == 0 or len(edges) == n * (n - 1) // 2:
            # new node joined to a random non-empty subset of the graph
            k = int(rng.integers(1, n + 1))
            added = {(int(t), n): int(rng.integers(1, 10)) for t in rng.choice(n, size=k, replace=False)}
            g2 = graph_with_weights(n + 1, {**edges, **added})
            case = "node"
        else:
            missing = [e for e in itertools.combinations(range(n), 2) if e not in edges]
            added = {missing[int(rng.integers(len(missing)))]: int(rng.integers(1, 10))}
            g2 = graph_with_weights(n, {**edges, **added})
            case = "edge"
        u2 = uncertainty(g2, params)
        res.cases += 1
        if not u2 < u:
            res.failures += 1
            res.notes.append(f"{case} on n={n} with weights {sorted(added.values())}: u {u:.6g} -> {u2:.6g}")
        res.worst = max(res.worst, u2 - u)
    return res


def kronecker_suite(sizes, count, rng, scales=(0.5, 1.0, 2.0)) -> SuiteResult:
    res = SuiteResult("kronecker")
    for n in _sizes_cycle(sizes, count):
        g = random_weighted_graph(n, rng)
        for k in scales:
            p = UncertaintyParams(k)
            err = abs(uncertainty(g, p) - uncertainty_direct(g, p))
            res.worst = max(res.worst, err)
            res.failures += not err < 1e-8
        res.cases += 1
    return res


def _layer_instance(n: int, rng: np.random.Generator):
    kind = ("dense", "graphconv", "recurrent")[int(rng.integers(3))]
    n_in, hid, n_out = (int(v) for v in rng.integers(1, 6, size=3))
    act = str(rng.choice(["tanh", "sigmoid", "linear"]))
    adj = None
    if kind == "dense":
        spec = nn.NetSpec([nn.dense(n_in, hid), nn.dense(hid, n_out, act)])
        x = rng.normal(size=(n, n_in))
    elif kind == "graphconv":
        spec = nn.NetSpec([nn.graphconv(n_in, hid), nn.dense(hid, n_out, act)])
        w = np.triu(rng.integers(0, 4, size=(n, n)), 1).astype(float)
        adj = nn.normalized_adjacency(w + w.T)
        x = rng.normal(size=(n, n_in))
    else:
        spec = nn.NetSpec([nn.recurrent(n_in, hid), nn.dense(hid, n_out, act)])
        x = [rng.normal(size=(n, n_in)) for _ in range(int(rng.integers(1, 4)))]
    return kind, spec, x, adj


def _small_state(n: int, rng: np.random.Generator):
    cfg = desk_preset(seed=int(rng.integers(1 << 30)), capacity=max(n, 2), frames_per_slot=6,
                      n_points=160, episode_slots=4)
    env = MapEnv(cfg)
    s = env.reset()
    for _ in range(int(rng.integers(0, 3))):
        s, _, _ = env.step(random_action(s, rng))
    return s


def gradient_suite(sizes, count, rng) -> SuiteResult:
    """Layer checks (< 1e-4) and end-to-end actor objective checks (< 1e-3)."""
    res = SuiteResult("gradients")
    for n in _sizes_cycle(sizes, count):
        kind, spec, x, adj = _layer_instance(n, rng)
        err = nn.grad_check(spec, nn.init_params(spec, rng), x, adj, rng=rng)
        res.worst = max(res.worst, err)
        if not err < 1e-4:
            res.failures += 1
            res.notes.append(f"{kind} layer: {err:.3g}")

        ac = acm.ActorCritic.create(rng, learn=acm.LearnerConfig(reward_scale=1.0))
        s = _small_state(n, rng)
        grads, _ = acm.actor_gradient(ac, [s])

        def objective():
            return acm.critic_value(ac, s, acm.actor_scores(ac.net, ac.actor, [s])[0])

        for name in rng.choice(sorted(ac.actor), size=2, replace=False):
            num = nn.numeric_grad(objective, ac.actor[name], 1e-6)
            e2e = float(np.max(nn.relative_error(grads[name], num, atol=1e-5)))
            if not e2e < 1e-3:
                res.failures += 1
                res.notes.append(f"end-to-end {name}: {e2e:.3g}")
        res.cases += 1
    return res


def tiny_instance(size: int, rng: np.random.Generator):
    """A state with D = ``size`` and at most 8 candidates, plus the next slot's keyframes."""
    cfg = desk_preset(seed=int(rng.integers(1 << 30)), capacity=max(size, 2),
                      frames_per_slot=int(rng.integers(3, 9)), n_points=120)
    env = MapEnv(cfg)
    s = env.reset()
    for _ in range(int(rng.integers(0, 4))):
        s, _, _ = env.step(random_action(s, rng))
    return s, peek_keyframes(env)


def greedy_suite(sizes, count, rng, ratio: float = 0.95, required: float = 0.95) -> SuiteResult:
    """Greedy within ``1 - ratio`` of the optimum's magnitude in >= ``required`` of instances.

    Rewards are negative uncertainties, so "at least 95% of the optimum" is
    read as ``r_greedy >= r_best - 0.05 * |r_best|``.
    """
    res = SuiteResult("greedy")
    misses = 0
    for size in _sizes_cycle(sizes, count):
        s, kfs = tiny_instance(size, rng)
        g = greedy_one_slot(s, kfs)
        _, best = bruteforce_one_slot(s, kfs)
        final = sorted((set(s.graph.frame_ids()) | g.upload) - g.evict)
        got = SlotEvaluator(s, kfs).reward(final)
        gap = (best - got) / max(abs(best), 1e-12)
        res.worst = max(res.worst, gap)
        misses += got < best - (1 - ratio) * abs(best) - 1e-12
        res.cases += 1
    if res.cases and misses > (1 - required) * res.cases + 1e-9:
        res.failures = misses
    res.notes.append(f"{res.cases - misses}/{res.cases} within {ratio:.0%}")
    return res


SUITES = {"matrix_tree": matrix_tree_suite, "monotonicity": monotonicity_suite,
          "kronecker": kronecker_suite, "gradients": gradient_suite, "greedy": greedy_suite}


def oracle_check(sizes=DEFAULT_SIZES, counts=None, seed: int = 0, suites=None) -> OracleReport:
    """Run the oracle suites over graphs cycling through ``sizes`` node counts.

    An empty ``sizes`` gives an empty, passing report.
    """
    sizes = tuple(sizes)
    report = OracleReport()
    if not sizes:
        return report
    if any(not 2 <= n <= 6 for n in sizes):
        raise ValueError("oracle sizes must lie in [2, 6]")
    counts = {**DEFAULT_COUNTS, **(counts or {})}
    for i, name in enumerate(suites or SUITES):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        res = SUITES[name](sizes, counts[name], rng)
        res.seconds = time.perf_counter() - t0
        report.suites.append(res)
    return report
