"""Command line front end.

Subcommands:

* ``train``          - run one seeded curriculum from a TOML config or a
                       previously written run manifest, with flag overrides.
* ``eval``           - evaluate a saved policy checkpoint on the held-out
                       maze suite.
* ``report``         - pool finished run directories into a comparison
                       table (CSV) and a grouped bar chart (SVG).
* ``inspect-buffer`` - print buffer levels as ASCII maps with their scores
                       and replay probabilities.

Unknown keys in a config file are an error (exit code 2) so that typos in
experiment configs never run silently with defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import evaluation, level_buffer, maze_env
from .runner import ALGORITHMS, RunConfig, RunConfigError, UedRun
from .student import load_checkpoint
from .util import atomic_write_text, derive_seed, fmt_float


def _load_config(path: str) -> RunConfig:
    """Accept a TOML experiment config or a ``run-manifest.json``."""
    with open(path, "rb") as fh:
        head = fh.read(64).lstrip()
        fh.seek(0)
        if head.startswith(b"{"):
            manifest = json.load(fh)
            if manifest.get("kind") != "cenie-lab-run":
                raise RunConfigError(f"{path} is not a run manifest")
            return RunConfig.from_dict(manifest["config"])
        data = tomllib.load(fh)
    return RunConfig.from_dict(data)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if args.algorithm is not None:
        updates["algorithm"] = args.algorithm
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.alpha is not None:
        updates["alpha"] = args.alpha
    if args.total_updates is not None:
        updates["total_ppo_updates"] = args.total_updates
    if args.grid_size is not None:
        updates["grid_size"] = args.grid_size
    return replace(cfg, **updates) if updates else cfg


def _cmd_train(args) -> int:
    cfg = _load_config(args.config) if args.config else RunConfig()
    cfg = _apply_overrides(cfg, args)
    out_dir = args.out or os.path.join("runs", f"{cfg.algorithm}-s{cfg.seed}")
    run = UedRun(cfg, out_dir).run()
    with open(os.path.join(out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    print(
        f"{cfg.algorithm} seed={cfg.seed}: {run.ppo_updates} updates, "
        f"{run.env_steps} env steps, mean solved "
        f"{fmt_float(summary['mean_solved'])}, artifacts in {out_dir}"
    )
    return 0


def _cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    suite = maze_env.held_out_suite(args.grid_size or 9)
    rng = np.random.default_rng(derive_seed(args.seed or 0, 4, 1 << 21))
    records = evaluation.solved_rate(
        params, suite, args.episodes, rng, args.h_max,
        deterministic=args.deterministic,
    )
    lines = ["level_name,level_id,episodes,solved_rate,mean_return"]
    for r in records:
        lines.append(
            f"{r.level_name},{r.level_id},{r.episodes},"
            f"{fmt_float(r.solved_rate)},{fmt_float(r.mean_return)}"
        )
        print(f"{r.level_name:18s} solved {r.solved_rate:6.3f}  return {r.mean_return:6.3f}")
    scores = [r.solved_rate for r in records]
    print(
        f"{'aggregate':18s} mean {float(np.mean(scores)):6.3f}  "
        f"iqm {evaluation.iqm(scores):6.3f}  "
        f"gap {evaluation.optimality_gap(scores):6.3f}"
    )
    if args.out:
        atomic_write_text(args.out, "\n".join(lines) + "\n")
        print(f"wrote {args.out}")
    return 0


def _read_run_dir(run_dir: str):
    with open(os.path.join(run_dir, "summary.json")) as fh:
        summary = json.load(fh)
    rows = {}
    with open(os.path.join(run_dir, "eval.csv")) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            cells = dict(zip(header, line.strip().split(",")))
            rows[cells["level_name"]] = float(cells["solved_rate"])
    return summary["algorithm"], summary["seed"], rows


def _cmd_report(args) -> int:
    by_algo = {}
    level_names = []
    for run_dir in args.run_dirs:
        algo, seed, rows = _read_run_dir(run_dir)
        by_algo.setdefault(algo, []).append(rows)
        for name in rows:
            if name not in level_names:
                level_names.append(name)
    algos = sorted(by_algo)
    lines = [
        "algorithm,runs,mean_solved,iqm_solved,optimality_gap,"
        + ",".join(f"solved_{n}" for n in level_names)
    ]
    series = {}
    table = []
    for algo in algos:
        run_rows = by_algo[algo]
        pooled = [rows[n] for rows in run_rows for n in level_names]
        per_level = [
            float(np.mean([rows[n] for rows in run_rows])) for n in level_names
        ]
        series[algo] = per_level
        cells = [
            algo,
            str(len(run_rows)),
            fmt_float(float(np.mean(pooled))),
            fmt_float(evaluation.iqm(pooled)),
            fmt_float(evaluation.optimality_gap(pooled)),
            *(fmt_float(v) for v in per_level),
        ]
        lines.append(",".join(cells))
        table.append((algo, len(run_rows), float(np.mean(pooled)), evaluation.iqm(pooled)))
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "comparison.csv")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    evaluation.svg_bar_chart(
        os.path.join(args.out, "comparison.svg"),
        "held-out solved rate by level",
        level_names,
        series,
    )
    for algo, n, mean, iqm in table:
        print(f"{algo:12s} runs={n}  mean solved {mean:.3f}  iqm {iqm:.3f}")
    print(f"wrote {csv_path} and comparison.svg")
    return 0


def _cmd_inspect_buffer(args) -> int:
    path = args.buffer
    if os.path.isdir(path):
        path = os.path.join(path, "checkpoint.buffer.json")
    with open(path) as fh:
        entries = level_buffer.buffer_from_dict(json.load(fh))
    if not entries:
        print("buffer is empty")
        return 0
    bcfg = level_buffer.BufferConfig(
        capacity=max(len(entries), 1),
        beta=args.beta,
        rho=args.rho,
        alpha=args.alpha,
        replay_rate=0.5,
    )
    episode = max(e.last_replay_episode for e in entries)
    probs = level_buffer.combined_replay_probs(entries, bcfg, episode)
    order = np.argsort(-probs, kind="stable")[: args.top]
    for rank, idx in enumerate(order, start=1):
        e = entries[idx]
        print(
            f"#{rank}  p_replay={fmt_float(float(probs[idx]))}  "
            f"regret={fmt_float(e.regret_score)}  novelty={fmt_float(e.novelty_score)}  "
            f"id={e.level.level_id[:12]}"
        )
        print(maze_env.render_ascii(e.level))
        print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cenie-lab",
        description="maze curricula with regret plus coverage-novelty replay scores",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one seeded curriculum")
    p_train.add_argument("--config", help="TOML config or run-manifest JSON")
    p_train.add_argument("--algorithm", choices=ALGORITHMS)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--alpha", type=float, help="novelty weight in replay scores")
    p_train.add_argument("--total-updates", type=int, dest="total_updates")
    p_train.add_argument("--grid-size", type=int, dest="grid_size")
    p_train.add_argument("--out", help="artifact directory (default runs/<algo>-s<seed>)")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the held-out suite")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--grid-size", type=int, dest="grid_size", default=9)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--h-max", type=int, dest="h_max", default=100)
    p_eval.add_argument("--deterministic", action="store_true")
    p_eval.add_argument("--out", help="optional CSV path")
    p_eval.set_defaults(func=_cmd_eval)

    p_report = sub.add_parser("report", help="pool run directories into a comparison")
    p_report.add_argument("run_dirs", nargs="+")
    p_report.add_argument("--out", required=True, help="report output directory")
    p_report.set_defaults(func=_cmd_report)

    p_inspect = sub.add_parser("inspect-buffer", help="print buffer levels and scores")
    p_inspect.add_argument(
        "buffer", help="path to a saved buffer JSON, or a run directory holding one"
    )
    p_inspect.add_argument("--top", type=int, default=10)
    p_inspect.add_argument("--alpha", type=float, default=0.5)
    p_inspect.add_argument("--beta", type=float, default=0.3)
    p_inspect.add_argument("--rho", type=float, default=0.5)
    p_inspect.set_defaults(func=_cmd_inspect_buffer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RunConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
