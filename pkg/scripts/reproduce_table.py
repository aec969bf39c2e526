#!/usr/bin/env python3
"""Run the court-simulation benchmark grid and print the summary table.

Runs every config under configs/court (optionally filtered by --tau),
writes per-config outputs under --out, and prints one aligned table per
tau value together with dual-oracle estimates of the optimal value at
the nominal budgets B and at the margined budgets B' actually targeted
by the strategies.

Full grid at default settings takes roughly half an hour on one core.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from cbwk.cli import format_summary_rows
from cbwk.fairness import CourtEnv, court_budgets, spend_margin_vector
from cbwk.harness import (
    ExperimentConfig,
    prepare_config,
    run_batch,
    write_run_outputs,
)
from cbwk.oracles import estimate_opt


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--configs", type=Path, default=REPO_ROOT / "configs" / "court")
    parser.add_argument("--out", type=Path, default=REPO_ROOT / "results")
    parser.add_argument("--tau", type=float, default=None,
                        help="only run configs whose env tau matches")
    parser.add_argument("--seeds", type=int, default=None,
                        help="override n_seeds for every config")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--skip-opt", action="store_true",
                        help="skip the dual-oracle OPT estimates")
    parser.add_argument("--opt-samples", type=int, default=10000)
    parser.add_argument("--opt-reps", type=int, default=20)
    return parser.parse_args(argv)


def opt_rows(tau: float, samples: int, reps: int) -> list[dict]:
    env = CourtEnv(tau=tau)
    budgets = court_budgets(tau)
    rows = []
    for label, margin in (("OPT(B)", 0.0), ("OPT(B')", 0.005)):
        est = estimate_opt(env, budgets - spend_margin_vector(margin),
                           n_samples=samples, reps=reps, seed=0)
        rows.append({"label": label,
                     "avg_reward": {"mean": est.value, "two_se": est.two_stderr}})
    return rows


def main(argv=None) -> int:
    args = parse_args(argv)
    config_paths = sorted(args.configs.glob("*.json"))
    if not config_paths:
        print(f"no configs found under {args.configs}", file=sys.stderr)
        return 1

    by_tau: dict[float, list[dict]] = {}
    for path in config_paths:
        cfg = ExperimentConfig.from_json_file(path)
        tau = cfg.env["tau"]
        if args.tau is not None and abs(tau - args.tau) > 1e-12:
            continue
        if args.seeds is not None:
            raw = cfg.to_dict()
            raw["n_seeds"] = args.seeds
            cfg = ExperimentConfig.from_dict(raw)
        cfg = prepare_config(cfg)
        start = time.perf_counter()
        result = run_batch(cfg, jobs=args.jobs)
        elapsed = time.perf_counter() - start
        out_dir = args.out / path.stem
        write_run_outputs(cfg, result, out_dir)
        print(f"{path.stem}: {cfg.n_seeds} seeds in {elapsed:.1f}s -> {out_dir}")
        by_tau.setdefault(tau, []).append(result.summary.to_dict())

    for tau in sorted(by_tau):
        rows = []
        if not args.skip_opt:
            rows.extend(opt_rows(tau, args.opt_samples, args.opt_reps))
        rows.extend(by_tau[tau])
        print(f"\ntau = {tau:g}")
        print(format_summary_rows(rows))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
