import json

import numpy as np
import pytest

from maptwin.agent.amm import (AmmConfig, amm_train, episode_curve, sigma_at, streams, train_model_free,
                               write_log)
from maptwin.channel import ChannelModel
from maptwin.env import MapEnv, desk_preset
from maptwin.twin import DigitalTwin

SMALL = dict(capacity=5, frames_per_slot=6, episode_slots=6, n_points=200)


def small_env(seed=3):
    return MapEnv(desk_preset(seed=seed, **SMALL))


def test_config_validation():
    for bad in (dict(n_artificial=-1), dict(batch=0), dict(gamma=0.0), dict(gamma=1.0), dict(episodes=-1)):
        with pytest.raises(ValueError):
            AmmConfig(**bad)


def test_sigma_schedule_endpoints():
    cfg = AmmConfig(sigma_start=0.4, sigma_end=0.0)
    assert sigma_at(cfg, 0, 11) == 0.4
    assert sigma_at(cfg, 5, 11) == pytest.approx(0.2)
    assert sigma_at(cfg, 10, 11) == 0.0
    assert sigma_at(cfg, 50, 11) == 0.0
    assert sigma_at(cfg, 0, 1) == 0.4


def test_streams_are_independent_and_reproducible():
    a, b = streams(4), streams(4)
    draws = [g.random(3) for g in a]
    assert all(np.array_equal(d, g.random(3)) for d, g in zip(draws, b))
    assert not np.allclose(draws[0], draws[1])


def test_log_length_is_episodes_times_slots():
    cfg = AmmConfig(n_artificial=2, episodes=3, batch=4, seed=1)
    env = small_env()
    twin = DigitalTwin.create(env.cfg, np.random.default_rng(0), hidden=8)
    _, log = amm_train(env, twin, cfg)
    assert len(log) == 3 * env.cfg.episode_slots
    assert len(episode_curve(log)) == 3
    assert {row["source"] for row in log} == {"real"}
    assert all(np.isfinite(row["critic_loss"]) for row in log)


def test_zero_episodes_gives_empty_log():
    _, log = train_model_free(small_env(), AmmConfig(episodes=0))
    assert log == [] and episode_curve(log) == []


def test_n_zero_is_the_model_free_trainer():
    cfg = AmmConfig(n_artificial=0, episodes=2, batch=4, seed=7)
    env_cfg = desk_preset(seed=5, **SMALL)
    twin = DigitalTwin.create(env_cfg, np.random.default_rng(0), hidden=8)
    ac1, log1 = amm_train(MapEnv(env_cfg), twin, cfg)
    ac2, log2 = train_model_free(MapEnv(env_cfg), cfg)
    assert json.dumps(log1) == json.dumps(log2)
    for k in ac1.actor:
        assert np.array_equal(ac1.actor[k], ac2.actor[k])
    assert len(twin.artificial) == 0


def test_artificial_updates_change_training():
    env_cfg = desk_preset(seed=5, **SMALL)
    logs = []
    for n in (0, 3):
        twin = DigitalTwin.create(env_cfg, np.random.default_rng(0), hidden=8)
        _, log = amm_train(MapEnv(env_cfg), twin, AmmConfig(n_artificial=n, episodes=2, batch=4, seed=7))
        logs.append(log)
    assert logs[0][0]["reward"] == logs[1][0]["reward"]      # first action precedes any update
    assert [r["critic_loss"] for r in logs[0]] != [r["critic_loss"] for r in logs[1]]
    assert any(r["artificial_critic_loss"] is not None for r in logs[1])


def test_training_is_deterministic():
    env_cfg = desk_preset(seed=2, **SMALL)
    runs = []
    for _ in range(2):
        twin = DigitalTwin.create(env_cfg, np.random.default_rng(1), hidden=8)
        runs.append(amm_train(MapEnv(env_cfg), twin, AmmConfig(n_artificial=2, episodes=2, batch=4))[1])
    assert json.dumps(runs[0]) == json.dumps(runs[1])


def test_artificial_updates_need_a_twin():
    with pytest.raises(ValueError):
        amm_train(small_env(), None, AmmConfig(n_artificial=1, episodes=1))


def test_write_log_rows(tmp_path):
    _, log = train_model_free(small_env(), AmmConfig(episodes=1, batch=4))
    write_log(log, tmp_path / "log.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert len(rows) == len(log)
    assert set(rows[0]) >= {"episode", "slot", "reward", "critic_loss", "source"}


def test_plan_switches_trajectory_and_channel():
    env = small_env()
    seen = []
    slow = ChannelModel(frame_bits=5e6, p_hl=0.9, p_lh=0.1)

    def plan(ep):
        seen.append(ep)
        return 40 + ep, slow

    _, log = train_model_free(env, AmmConfig(episodes=2, batch=4), plan)
    assert seen == [0, 1] and env.cfg.channel == slow
    assert len(log) == 2 * env.cfg.episode_slots
