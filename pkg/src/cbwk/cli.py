"""Command-line entry point.

Subcommands:

    run      execute one experiment config, write series.csv / summary.json /
             config.json into the output directory, print the summary row
    opt      evaluate the static optimum for an environment and budget vector
    table    collect summary.json files under a directory into one table
    selftest run the built-in invariant suite

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on runtime
failures (including selftest check failures).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .fairness import CourtEnv
from .harness import (
    ConfigError,
    ExperimentConfig,
    finite_env_from_dict,
    load_summary,
    run_batch,
    write_run_outputs,
)
from .oracles import DualSample, brute_force_opt, estimate_opt
from .selftest import run_selftest

_PREFERRED_COLUMNS = ("avg_reward", "ride_cost", "voucher_cost", "fairness")


def _load_json(path, what: str):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from None


def format_summary_rows(rows: list[dict]) -> str:
    """Render summary rows as an aligned text table, mean (2 SE) per metric."""
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key != "label" and key not in keys:
                keys.append(key)
    keys.sort(key=lambda k: (_PREFERRED_COLUMNS.index(k) if k in _PREFERRED_COLUMNS else len(_PREFERRED_COLUMNS), k))
    lines = [["label"] + keys]
    for row in rows:
        cells = [str(row.get("label", ""))]
        for key in keys:
            cell = row.get(key)
            cells.append("-" if cell is None else f"{cell['mean']:.4f} ({cell['two_se']:.4f})")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(lines[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in lines)


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    if args.seeds is not None or args.seed is not None:
        data = cfg.to_dict()
        if args.seeds is not None:
            data["n_seeds"] = args.seeds
        if args.seed is not None:
            data["base_seed"] = args.seed
        cfg = ExperimentConfig.from_dict(data)
    result = run_batch(cfg, jobs=max(1, args.jobs))
    out = Path(args.out)
    write_run_outputs(cfg, result, out)
    print(f"wrote {out}/series.csv, {out}/summary.json, {out}/config.json")
    print(format_summary_rows([result.summary.to_dict()]))
    return 0


def _cmd_opt(args) -> int:
    if args.env == "court":
        if args.tau is None:
            raise ConfigError("opt --env court requires --tau")
        env = CourtEnv(tau=args.tau)
    else:
        if args.instance_file is None:
            raise ConfigError("opt --env finite requires --instance-file")
        env = finite_env_from_dict(_load_json(args.instance_file, "instance file"))
    budgets = env.budgets
    if args.budget_file is not None:
        budgets = np.asarray(_load_json(args.budget_file, "budget file"), dtype=float)
    if args.env == "finite":
        value = brute_force_opt(DualSample.from_finite_instance(env, budgets))
        print(f"OPT = {value:.6g} (exact finite-instance program)")
        return 0
    est = estimate_opt(
        env,
        budgets,
        n_samples=args.samples,
        reps=args.reps,
        seed=args.seed,
        iters=args.iters,
        schedule=args.schedule,
    )
    print(f"OPT = {est.value:.6g} +/- {est.two_stderr:.2g} (2 SE over {est.reps} reps, {args.samples} samples each)")
    return 0


def _cmd_table(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise ConfigError(f"runs directory not found: {runs}")
    paths = sorted(runs.rglob("summary.json"))
    if not paths:
        raise ConfigError(f"no summary.json files under {runs}")
    rows: list[dict] = []
    for path in paths:
        rows.extend(load_summary(path))
    print(format_summary_rows(rows))
    return 0


def _cmd_selftest(args) -> int:
    results = run_selftest()
    for res in results:
        status = "ok  " if res.ok else "FAIL"
        print(f"{status} {res.name:<26} {res.seconds:6.2f}s  {res.detail}")
    failed = [res for res in results if not res.ok]
    total = sum(res.seconds for res in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {total:.1f}s")
    return 0 if not failed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbwk",
        description="Contextual bandits with knapsack constraints: experiments and oracles.",
    )
    sub = parser.add_subparsers(dest="command")

    run_p = sub.add_parser("run", help="execute one experiment config and write its outputs")
    run_p.add_argument("--config", required=True, help="path to a JSON experiment config")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seeds", type=int, default=None, help="override the number of seeds")
    run_p.add_argument("--seed", type=int, default=None, help="override the base seed")
    run_p.add_argument("--jobs", type=int, default=1, help="worker processes for the batch")
    run_p.set_defaults(func=_cmd_run)

    opt_p = sub.add_parser("opt", help="evaluate the static optimum for an environment")
    opt_p.add_argument("--env", choices=("court", "finite"), default="court")
    opt_p.add_argument("--tau", type=float, default=None, help="fairness budget for the court environment")
    opt_p.add_argument("--instance-file", default=None, help="JSON finite instance (env=finite)")
    opt_p.add_argument("--budget-file", default=None, help="JSON list overriding the budget vector")
    opt_p.add_argument("--samples", type=int, default=10000, help="contexts sampled per repetition")
    opt_p.add_argument("--reps", type=int, default=20, help="independent repetitions")
    opt_p.add_argument("--seed", type=int, default=0)
    opt_p.add_argument("--iters", type=int, default=2000, help="dual minimization iterations")
    opt_p.add_argument("--schedule", choices=("geometric", "sqrt"), default="geometric")
    opt_p.set_defaults(func=_cmd_opt)

    table_p = sub.add_parser("table", help="tabulate summary.json files under a directory")
    table_p.add_argument("--runs", required=True, help="directory containing run outputs")
    table_p.set_defaults(func=_cmd_table)

    selftest_p = sub.add_parser("selftest", help="run the built-in invariant suite")
    selftest_p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems and 0 for --help; fold the former
        # into this tool's usage-error code.
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
