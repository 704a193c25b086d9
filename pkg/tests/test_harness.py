import json
import math
from dataclasses import replace

import jsonschema
import numpy as np
import pytest

from maptwin import covis
from maptwin import harness as h
from maptwin.agent.amm import AmmConfig
from maptwin.agent.policies import baseline_lff
from maptwin.cli import main
from maptwin.env import MapEnv, desk_preset
from maptwin.scene import load_trace

TINY_ENV = dict(capacity=5, frames_per_slot=6, episode_slots=4, n_points=200)


def tiny(**kw):
    base = dict(env=desk_preset(**TINY_ENV), amm=AmmConfig(episodes=2, batch=4, gamma=0.2),
                seeds=(0, 1), twin_hidden=8)
    return h.ExperimentConfig(**{**base, **kw})


# ------------------------------------------------------------------- config

def test_config_invariants():
    with pytest.raises(ValueError):
        tiny(seeds=())
    with pytest.raises(ValueError):
        tiny(seeds=(1, 1))
    with pytest.raises(ValueError):
        h.SweepSpec(ratios=(0.2, 1.0))
    with pytest.raises(ValueError):
        h.SweepSpec(ratios=(0.0,))


def test_config_file_roundtrip():
    cfg = h.config_from_dict({"preset": "desk", "env": {"capacity": 6, "channel": {"p_hl": 0.3}},
                              "amm": {"episodes": 3, "n_artificial": 2}, "sweep": {"ratios": [0.3, 0.6]},
                              "seeds": [4, 5], "eval_episodes": 2})
    assert cfg.env.capacity == 6 and cfg.env.channel.p_hl == 0.3
    assert cfg.env.channel.frame_bits == 5e6
    assert cfg.amm.episodes == 3 and cfg.amm.n_artificial == 2
    assert cfg.sweep.ratios == (0.3, 0.6) and cfg.seeds == (4, 5) and cfg.eval_episodes == 2
    t1 = h.config_from_dict({"preset": "table1"})
    assert (t1.env.capacity, t1.env.frames_per_slot) == (25, 60)


@pytest.mark.parametrize("raw", [
    {"seeds": []},
    {"sweep": {"ratios": [1.0]}},
    {"env": {"capacity": 1}},
    {"env": {"unknown": 3}},
    {"preset": "huge"},
    {"amm": {"gamma": 1.5}},
    {"workers": 0},
])
def test_schema_rejects(raw):
    with pytest.raises(jsonschema.ValidationError):
        h.config_from_dict(raw)


# -------------------------------------------------------------- experiments

def test_two_seeds_three_episodes_six_rows():
    rows = h.run_experiment(tiny(eval_episodes=3), "pu")
    assert len(rows) == 6
    assert [(r.seed, r.episode) for r in rows] == [(s, e) for s in (0, 1) for e in range(3)]
    assert all(r.violations == 0 for r in rows)
    assert all(r.mean_uncertainty == -r.mean_reward for r in rows)


def test_rerun_gives_identical_rows():
    cfg = tiny()
    assert h.run_experiment(cfg, "random") == h.run_experiment(cfg, "random")


def test_baselines_have_no_training_fields_and_amm_does():
    cfg = tiny()
    for scheme in ("lff", "pu"):
        for r in h.run_experiment(cfg, scheme):
            assert r.training is None and "training" not in r.as_dict()
    amm = h.run_experiment(replace(cfg, seeds=(0,)), "amm")
    assert amm[0].training["episodes"] == 2
    assert amm[0].violations == 0


def test_unknown_scheme():
    with pytest.raises(ValueError):
        h.run_experiment(tiny(), "oracle")


def test_peek_does_not_disturb_the_episode():
    env_a, env_b = MapEnv(desk_preset(seed=3)), MapEnv(desk_preset(seed=3))
    sa, sb = env_a.reset(5), env_b.reset(5)
    for _ in range(5):
        kfs = h.peek_keyframes(env_a)
        sa, ra, _ = env_a.step(baseline_lff(sa))
        sb, rb, _ = env_b.step(baseline_lff(sb))
        assert ra == rb and sa.same_as(sb)
        assert [f.points for f in kfs] == [f.points for f in sa.batch.keyframes]


def test_sweep_nine_cells_and_deterministic_csv():
    cfg = tiny(seeds=(0,))
    table, rows = h.sweep_high_rate_ratio(cfg, (0.2, 0.5, 0.8), ("lff", "pu", "random"))
    assert len(table) == 9
    assert {r for r, _ in table} == {0.2, 0.5, 0.8}
    again, _ = h.sweep_high_rate_ratio(cfg, (0.2, 0.5, 0.8), ("lff", "pu", "random"))
    assert h.sweep_csv(table) == h.sweep_csv(again)
    assert h.sweep_csv(table).splitlines()[0] == "ratio,lff,pu,random"
    with pytest.raises(ValueError):
        h.sweep_high_rate_ratio(cfg, (0.5, 1.0), ("pu",))


def test_workers_do_not_change_results():
    cfg = tiny(seeds=(0, 1, 2))
    one = h.run_experiment(cfg, "random")
    two = h.run_experiment(replace(cfg, workers=2), "random")
    assert h.rows_jsonl(one) == h.rows_jsonl(two)


def test_more_budget_never_hurts_pu_on_average():
    # stationary High fraction 0.8 against 0.2 over ten scenes
    cfg = h.ExperimentConfig(env=desk_preset(episode_slots=20), seeds=tuple(range(10)))
    table, rows = h.sweep_high_rate_ratio(cfg, (0.2, 0.8), ("pu",))
    assert table[(0.8, "pu")] <= table[(0.2, "pu")]
    assert all(r.violations == 0 for r in rows)


# -------------------------------------------------------------- convergence

def test_curves_have_configured_length_and_n0_is_model_free():
    cfg = tiny(seeds=(3,), n_values=(0, 2))
    curves = h.convergence_study(cfg)
    assert set(curves) == {0, 2}
    assert all(len(c) == 2 for by_seed in curves.values() for c in by_seed.values())
    mf_curve, mf_log = h.model_free_run(cfg, 3)
    assert curves[0][3] == mf_curve
    _, log0 = h.convergence_run(cfg, 3, 0)
    assert json.dumps(log0) == json.dumps(mf_log)


def test_plateau_reach():
    assert h.plateau_reach([100, 200, 300, 300, 300]) == 2
    assert h.plateau_reach([300, 100, 300, 300, 300]) == 0
    assert h.plateau_reach([-100, -50, -10, -10, -10]) == 2     # within 5% of |-10|
    assert h.plateau_reach([5.0]) == 0
    with pytest.raises(ValueError):
        h.plateau_reach([])


def test_reach_wins_counts_strict_improvements():
    curves = {5: {0: [1, 10, 10, 10], 1: [10, 10, 10, 10]}, 0: {0: [1, 1, 10, 10], 1: [10, 10, 10, 10]}}
    assert h.reach_wins(curves, 5, 0) == (1, 2)


def test_curves_jsonl_and_plot_data():
    curves = {0: {1: [1.0, 2.0]}, 5: {1: [1.5, 2.5]}}
    lines = h.curves_jsonl(curves).splitlines()
    assert json.loads(lines[0]) == {"N": 0, "seed": 1, "episode": 0, "mean_reward": 1.0}
    dat = h.curve_plot_data(curves).splitlines()
    assert dat[0] == "# episode N0 N5" and dat[2] == "1 2.0 2.5"


# ------------------------------------------------------------------- oracle

def test_empty_sizes_give_passing_empty_report():
    report = h.oracle_check([])
    assert report.passed and report.suites == []


def test_small_oracle_run():
    counts = {"matrix_tree": 40, "monotonicity": 40, "kronecker": 10, "gradients": 2, "greedy": 6}
    report = h.oracle_check((3, 4, 5), counts=counts,
                            suites=("matrix_tree", "kronecker", "gradients"))
    assert report.passed, report.lines()
    assert [s.cases for s in report.suites] == [40, 10, 2]


def test_oracle_sizes_validated():
    with pytest.raises(ValueError):
        h.oracle_check([7])


def test_monotonicity_suite_flags_unit_pendants_only():
    res = h.monotonicity_suite((2, 3, 4, 5, 6), 400, np.random.default_rng(5))
    assert res.cases == 400
    # a node hanging off one unit-weight edge keeps the tree sum, hence u, unchanged
    assert all("node" in n and "weights [1]:" in n for n in res.notes)
    assert res.failures == len(res.notes)


def test_wrong_kronecker_exponent_caught_by_exponent_suite_only(monkeypatch):
    def swapped(g, params=covis.UncertaintyParams()):
        n_red = len(g) - 1
        if n_red < 1 or not covis.is_connected(g):
            return math.inf
        ld = covis.log_det_spd(covis.reduced_laplacian(g))
        return -(n_red * ld + covis.POSE_DOF * covis.POSE_DOF * math.log(params.pi_scale))

    monkeypatch.setattr(h, "uncertainty", swapped)
    counts = {"matrix_tree": 30, "kronecker": 20}
    report = h.oracle_check((3, 4, 5), counts=counts, suites=("matrix_tree", "kronecker"))
    assert report.suite("matrix_tree").passed
    assert not report.suite("kronecker").passed


def test_random_weighted_graph_properties():
    rng = np.random.default_rng(0)
    for n in (2, 4, 6):
        g = h.random_weighted_graph(n, rng)
        assert len(g) == n and covis.is_connected(g)
        assert all(1 <= w <= 9 for w in g.edges.values())


# ---------------------------------------------------------------------- cli

def write_cfg(tmp_path, **extra):
    raw = {"env": TINY_ENV, "amm": {"episodes": 1, "batch": 4}, "seeds": [0], **extra}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(raw))
    return p


def test_cli_run_writes_rows_and_logs(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", str(write_cfg(tmp_path)), "--out", str(out), "--scheme", "lff",
                 "--scheme", "greedy"])
    assert code == 0
    rows = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
    assert {r["scheme"] for r in rows} == {"lff", "greedy"}
    log = (out / "rollouts" / "lff_r0.5_s0_e0.jsonl").read_text().splitlines()
    assert len(log) == TINY_ENV["episode_slots"]
    assert set(json.loads(log[0])) == {"slot", "channel", "budget", "upload", "evict", "map_size", "reward"}
    assert "0 constraint violations" in capsys.readouterr().out


def test_cli_sweep_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"s{k}"
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--scheme", "pu", "--scheme", "lff",
                     "--ratios", "0.2", "0.8", "--emit-plot-data"]) == 0
        outs.append({p.name: p.read_bytes() for p in out.iterdir() if p.is_file()})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"sweep.csv", "sweep.dat", "metrics.jsonl"}
    assert outs[0]["sweep.dat"].startswith(b"# ratio lff pu\n")


def test_cli_converge(tmp_path):
    out = tmp_path / "c"
    assert main(["converge", "--config", str(write_cfg(tmp_path)), "--out", str(out), "--n", "0", "1",
                 "--episodes", "2", "--emit-plot-data"]) == 0
    rows = [json.loads(x) for x in (out / "curves.jsonl").read_text().splitlines()]
    assert len(rows) == 4
    assert (out / "curves.dat").exists()


def test_cli_oracle_exit_codes(tmp_path, capsys):
    assert main(["oracle", "--sizes"]) == 0
    assert "no suites run" in capsys.readouterr().out


def test_cli_bad_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"sweep": {"ratios": [1.0]}}))
    assert main(["sweep", "--config", str(p)]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_cli_gen_trace_roundtrip(tmp_path):
    assert main(["gen-trace", "--seed", "2", "--slots", "3", "--out", str(tmp_path), "--trajectory", "9"]) == 0
    batches, n_points = load_trace(tmp_path / "trace_s2_t9.txt")
    assert n_points == 400 and [b.slot for b in batches] == [1, 2, 3]
    assert batches == h.generate_trace(desk_preset(seed=2), 9, 3)
