"""Command-line entry point: ``maptwin {run,sweep,converge,oracle,gen-trace}``.

Exit status is 0 only when the run fully passes: zero constraint violations
for rollouts, every suite green for ``oracle``.  Configuration errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema

from . import harness as h
from .scene import save_trace


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config (validated against the schema)")
    common.add_argument("--preset", choices=sorted(h.PRESETS), help="scenario preset (overrides the config)")
    common.add_argument("--seed", type=int, help="first seed; with --n-seeds, seeds run consecutively")
    common.add_argument("--n-seeds", type=int, default=1)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, help="seed-level worker processes")
    common.add_argument("--emit-plot-data", action="store_true", help="also write gnuplot-ready .dat columns")

    p = argparse.ArgumentParser(prog="maptwin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="evaluate schemes, one row per seed and episode")
    run.add_argument("--scheme", action="append", choices=h.SCHEMES,
                     help="repeatable; default lff, pu and random")

    sweep = sub.add_parser("sweep", parents=[common], help="mean uncertainty over high-rate ratios")
    sweep.add_argument("--ratios", type=float, nargs="+")
    sweep.add_argument("--scheme", action="append", choices=h.SCHEMES, help="repeatable; default amm, lff, pu")

    conv = sub.add_parser("converge", parents=[common], help="per-episode training curves for each N")
    conv.add_argument("--n", type=int, nargs="+", dest="n_values")
    conv.add_argument("--episodes", type=int)

    orc = sub.add_parser("oracle", parents=[common], help="Matrix-Tree, monotonicity, Kronecker, gradient, greedy")
    orc.add_argument("--sizes", type=int, nargs="*", default=list(h.DEFAULT_SIZES),
                     help="graph node counts to cycle through (2..6); none gives an empty report")

    gt = sub.add_parser("gen-trace", parents=[common], help="write a synthetic trace file")
    gt.add_argument("--slots", type=int, default=40)
    gt.add_argument("--trajectory", type=int, default=0, help="walk seed")
    return p


def build_config(args) -> h.ExperimentConfig:
    raw = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
    if args.preset:
        raw["preset"] = args.preset
    if args.seed is not None:
        raw["seeds"] = list(range(args.seed, args.seed + max(args.n_seeds, 1)))
    if args.out is not None:
        raw["out"] = str(args.out)
    if args.workers is not None:
        raw["workers"] = args.workers
    if getattr(args, "ratios", None):
        raw.setdefault("sweep", {})["ratios"] = args.ratios
    if getattr(args, "n_values", None):
        raw["n_values"] = args.n_values
    if getattr(args, "episodes", None) is not None:
        raw.setdefault("amm", {})["episodes"] = args.episodes
    return h.config_from_dict(raw)


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def _violations(rows) -> int:
    return sum(r.violations for r in rows)


def cmd_run(cfg, args) -> int:
    rows = []
    for scheme in args.scheme or ["lff", "pu", "random"]:
        rows += h.run_experiment(cfg, scheme)
    rows.sort(key=lambda r: r.key)
    _write(cfg.out, "metrics.jsonl", h.rows_jsonl(rows))
    for (scheme,), u in h.mean_by(rows, "scheme").items():
        print(f"{scheme:8s} mean uncertainty {u:10.4f}")
    bad = _violations(rows)
    print(f"{len(rows)} rows, {bad} constraint violations")
    return 0 if bad == 0 else 1


def cmd_sweep(cfg, args) -> int:
    table, rows = h.sweep_high_rate_ratio(cfg, schemes=tuple(args.scheme or ("amm", "lff", "pu")))
    csv_text = h.sweep_csv(table)
    _write(cfg.out, "sweep.csv", csv_text)
    _write(cfg.out, "metrics.jsonl", h.rows_jsonl(rows))
    if args.emit_plot_data:
        _write(cfg.out, "sweep.dat", h.sweep_plot_data(table))
    sys.stdout.write(csv_text)
    bad = _violations(rows)
    print(f"{bad} constraint violations")
    return 0 if bad == 0 else 1


def cmd_converge(cfg, args) -> int:
    curves = h.convergence_study(cfg)
    _write(cfg.out, "curves.jsonl", h.curves_jsonl(curves))
    if args.emit_plot_data:
        _write(cfg.out, "curves.dat", h.curve_plot_data(curves))
    for n, by_seed in curves.items():
        reach = [h.plateau_reach(c) for c in by_seed.values()]
        print(f"N={n}: episodes to plateau per seed {reach}")
    ok = all(all(map(_finite, c)) for by_seed in curves.values() for c in by_seed.values())
    return 0 if ok else 1


def _finite(v) -> bool:
    return v == v and abs(v) != float("inf")


def cmd_oracle(cfg, args) -> int:
    report = h.oracle_check(args.sizes, seed=cfg.seeds[0])
    lines = report.lines()
    for s in report.suites:
        if not s.passed:
            lines += [f"  {n}" for n in s.notes[:10]]
    print("\n".join(lines) if lines else "no suites run")
    _write(cfg.out, "oracle.txt", "\n".join(lines) + "\n")
    return 0 if report.passed else 1


def cmd_gen_trace(cfg, args) -> int:
    env_cfg = replace(cfg.env, seed=cfg.seeds[0])
    batches = h.generate_trace(env_cfg, args.trajectory, args.slots)
    out = cfg.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"trace_s{env_cfg.seed}_t{args.trajectory}.txt"
    save_trace(batches, path, env_cfg.n_points)
    print(f"wrote {sum(len(b.frames) for b in batches)} frames in {len(batches)} slots to {path}")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "converge": cmd_converge, "oracle": cmd_oracle,
            "gen-trace": cmd_gen_trace}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (jsonschema.ValidationError, ValueError, TypeError, OSError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"maptwin: invalid configuration: {msg}", file=sys.stderr)
        return 2
    return COMMANDS[args.command](cfg, args)


if __name__ == "__main__":
    sys.exit(main())
