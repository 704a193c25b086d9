"""Twin-assisted actor-critic training and its model-free ablation.

Random streams are split once from the training seed: network init, the
agent stream (exploration noise and real-batch sampling) and the twin
stream (predictor fitting, emulation, artificial-batch sampling).  With no
artificial updates the twin stream is never touched, so the run coincides
with the plain model-free trainer draw for draw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..env import EnvState, MapEnv
from ..twin import (REAL_CAPACITY, DigitalTwin, Experience, Kind, ReplayBuffer, generate_artificial,
                    train_predictor)
from . import actor_critic as acm
from .policies import decode_action


@dataclass(frozen=True)
class AmmConfig:
    n_artificial: int = 5        # N: artificial-batch updates per real slot
    batch: int = 16              # |I|
    gamma: float = 0.5
    actor_lr: float = 1e-3
    critic_lr: float = 2e-3
    sigma_start: float = 0.1
    sigma_end: float = 0.01
    tau: float = 0.01
    reward_scale: float = 100.0
    episodes: int = 30
    artificial_per_slot: int = 8
    predictor_fit_steps: int = 3
    actor_delay: int = 0         # real slots of critic-only training before the actor moves
    seed: int = 0

    def __post_init__(self):
        if self.n_artificial < 0:
            raise ValueError("N must be >= 0")
        if self.batch < 1:
            raise ValueError("batch size |I| must be >= 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")

    @property
    def learner(self) -> acm.LearnerConfig:
        return acm.LearnerConfig(self.actor_lr, self.critic_lr, self.tau, self.reward_scale)


def streams(seed: int):
    """``(init, agent, twin)`` generators."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def sigma_at(cfg: AmmConfig, step: int, total: int) -> float:
    if total <= 1:
        return cfg.sigma_start
    frac = min(step / (total - 1), 1.0)
    return cfg.sigma_start + (cfg.sigma_end - cfg.sigma_start) * frac


def random_scores(s: EnvState, rng: np.random.Generator):
    """Exploration policy of the twin: uniform scores decoded into a feasible action."""
    sc = acm.ScoreAction(rng.uniform(-1, 1, len(s.batch.frames)), rng.uniform(-1, 1, len(s.graph)))
    return decode_action(s, sc.upload_scores, sc.evict_scores), sc


def policy_action(ac: acm.ActorCritic, s: EnvState, sigma: float = 0.0, rng=None):
    sc = acm.act(ac, s, sigma, rng)
    return decode_action(s, sc.upload_scores, sc.evict_scores), sc


def learn_step(ac: acm.ActorCritic, batch: list[Experience], gamma: float, train_actor: bool = True) -> float:
    states = [e.state for e in batch]
    gb = acm.make_batch(states)
    loss = acm.critic_update(ac, batch, gamma, gb=gb)
    if train_actor:
        acm.actor_update(ac, states, gb=gb)
    acm.soft_update_targets(ac)
    return loss


EpisodePlan = Callable[[int], tuple]


def _reset(env: MapEnv, plan: EpisodePlan | None, episode: int) -> EnvState:
    if plan is None:
        return env.reset()
    seed, channel = plan(episode)
    if channel is not None and channel != env.cfg.channel:
        env.cfg = replace(env.cfg, channel=channel)
    return env.reset(seed)


def _log_row(episode, slot, r, loss, art_loss):
    return {"episode": episode, "slot": slot, "reward": r, "critic_loss": loss,
            "artificial_critic_loss": art_loss, "source": "real"}


def amm_train(env: MapEnv, twin: DigitalTwin | None, cfg: AmmConfig,
              plan: EpisodePlan | None = None) -> tuple[acm.ActorCritic, list[dict]]:
    """Train on real slots, adding ``cfg.n_artificial`` twin-batch updates per slot.

    Returns the trained networks and one log row per real slot.
    """
    init_rng, agent_rng, twin_rng = streams(cfg.seed)
    ac = acm.ActorCritic.create(init_rng, learn=cfg.learner)
    if twin is None:
        if cfg.n_artificial > 0:
            raise ValueError("artificial updates need a twin")
        real = ReplayBuffer(REAL_CAPACITY, Kind.REAL)
    else:
        real = twin.real
    total = cfg.episodes * env.cfg.episode_slots
    log: list[dict] = []
    step = 0
    for ep in range(cfg.episodes):
        s = _reset(env, plan, ep)
        done = env.cfg.episode_slots == 0
        while not done:
            a, sc = policy_action(ac, s, sigma_at(cfg, step, total), agent_rng)
            s2, r, done = env.step(a)
            real.store(Experience(s, a, r, s2, Kind.REAL, sc))
            move = step >= cfg.actor_delay
            loss = learn_step(ac, real.sample(agent_rng, cfg.batch), cfg.gamma, move)
            art_loss = None
            if cfg.n_artificial > 0:
                art_loss = _twin_updates(ac, twin, cfg, twin_rng, move)
            log.append(_log_row(ep, s.slot, r, loss, art_loss))
            s = s2
            step += 1
    return ac, log


def _twin_updates(ac, twin: DigitalTwin, cfg: AmmConfig, rng, train_actor: bool) -> float | None:
    if not twin.ready():
        return None
    train_predictor(twin.predictor, twin.real, cfg.predictor_fit_steps, twin.lr, twin.fit_batch, rng)
    generate_artificial(twin.artificial, twin.real, random_scores, cfg.artificial_per_slot,
                        twin.predictor, rng, min_history=twin.predictor.history)
    if len(twin.artificial) == 0:
        return None
    losses = [learn_step(ac, twin.artificial.sample(rng, cfg.batch), cfg.gamma, train_actor)
              for _ in range(cfg.n_artificial)]
    return float(np.mean(losses))


def train_model_free(env: MapEnv, cfg: AmmConfig,
                     plan: EpisodePlan | None = None) -> tuple[acm.ActorCritic, list[dict]]:
    """Actor-critic on real experience only, written without any twin machinery."""
    init_rng, agent_rng, _ = streams(cfg.seed)
    ac = acm.ActorCritic.create(init_rng, learn=cfg.learner)
    buf = ReplayBuffer(REAL_CAPACITY, Kind.REAL)
    total = cfg.episodes * env.cfg.episode_slots
    log: list[dict] = []
    step = 0
    for ep in range(cfg.episodes):
        s = _reset(env, plan, ep)
        for _ in range(env.cfg.episode_slots):
            a, sc = policy_action(ac, s, sigma_at(cfg, step, total), agent_rng)
            s2, r, _ = env.step(a)
            buf.store(Experience(s, a, r, s2, Kind.REAL, sc))
            loss = learn_step(ac, buf.sample(agent_rng, cfg.batch), cfg.gamma, step >= cfg.actor_delay)
            log.append(_log_row(ep, s.slot, r, loss, None))
            s = s2
            step += 1
    return ac, log


def episode_curve(log: list[dict]) -> list[float]:
    """Mean real reward per episode, in episode order."""
    sums: dict[int, list] = {}
    for row in log:
        sums.setdefault(row["episode"], []).append(row["reward"])
    return [float(np.mean(sums[k])) for k in sorted(sums)]


def write_log(log: list[dict], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
