"""Built-in invariant suite behind the ``selftest`` CLI subcommand.

Nine deterministic small-scale checks, each probing one core contract:
dual nonnegativity, Lipschitz continuity of the projected dual step,
estimator clipping ranges, step-size doubling across regimes, the regime
cap, antisymmetry of the fairness cost components, the dual subgradient
inequality, a byte-exact CSV golden file, and agreement of the dual
minimizer with the exact finite-instance program. Total runtime is a few
seconds.
"""

from __future__ import annotations

import copy
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ContextVector, FiniteContextEnv
from .dual_strategy import AdaptiveConfig, AdaptiveDualStrategy, dual_update, ilog
from .estimators import FeatureMap, LinearUcbEstimator, OracleEstimator
from .fairness import court_cost
from .harness import ExperimentConfig, emit_csv, run_batch
from .oracles import (
    DualSample,
    brute_force_opt,
    dual_objective,
    dual_subgradient,
    minimize_dual,
)


class CheckFailure(AssertionError):
    """One selftest check did not hold."""


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def random_feasible_sample(
    rng: np.random.Generator,
    max_contexts: int = 5,
    max_actions: int = 4,
    max_dim: int = 3,
) -> DualSample:
    """Random finite instance whose uniform policy is strictly feasible."""
    n_x = int(rng.integers(1, max_contexts + 1))
    n_a = int(rng.integers(1, max_actions + 1))
    d = int(rng.integers(1, max_dim + 1))
    rewards = rng.uniform(0.0, 1.0, (n_x, n_a))
    costs = rng.uniform(-1.0, 1.0, (n_x, n_a, d))
    weights = rng.dirichlet(np.ones(n_x))
    uniform_cost = np.einsum("s,sad->d", weights, costs) / n_a
    budgets = np.clip(uniform_cost + 0.1, 0.05, 1.0)
    return DualSample(rewards=rewards, costs=costs, weights=weights, budgets=budgets)


def _check_dual_nonnegativity() -> str:
    rng = np.random.default_rng(101)
    worst = math.inf
    steps = 0
    for _ in range(50):
        d = int(rng.integers(1, 6))
        target = rng.uniform(0.0, 1.0, d)
        gamma = float(rng.uniform(0.01, 2.0))
        lam = np.zeros(d)
        for _ in range(100):
            lam = dual_update(lam, rng.uniform(-1.0, 1.0, d), target, gamma)
            steps += 1
            low = float(lam.min())
            worst = min(worst, low)
            if low < 0.0:
                raise CheckFailure(f"negative dual component {low:g}")
    return f"{steps} projected steps, smallest component {worst:g}"


def _check_projection_lipschitz() -> str:
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 8))
        u = rng.uniform(0.0, 3.0, d)
        v = rng.uniform(0.0, 3.0, d)
        target = rng.uniform(0.0, 1.0, d)
        lcb = rng.uniform(-1.0, 1.0, d)
        gamma = float(rng.uniform(0.01, 2.0))
        num = float(np.linalg.norm(dual_update(u, lcb, target, gamma) - dual_update(v, lcb, target, gamma)))
        den = float(np.linalg.norm(u - v))
        if den == 0.0:
            continue
        if num > den * (1.0 + 1e-12):
            raise CheckFailure(f"shared projected step expanded a pair: {num:g} > {den:g}")
        worst = max(worst, num / den)
    return f"200 pairs, worst contraction ratio {worst:.6f}"


def _check_clipping_ranges() -> str:
    rng = np.random.default_rng(303)
    fmap = FeatureMap(dim=3, evaluate=lambda x, a: np.concatenate(([1.0], x.coords)) * (a + 1))
    # Oversized width constant so the raw bounds overshoot and clipping engages.
    est = LinearUcbEstimator(feature_map=fmap, cost_dim=2, c_delta=5.0, reg=1.0)

    def probe() -> None:
        for _ in range(20):
            x = ContextVector(rng.uniform(-1.0, 1.0, 2))
            for a in range(2):
                ucb = est.reward_ucb(x, a)
                lcb = est.cost_lcb(x, a)
                if not 0.0 <= ucb <= 1.0:
                    raise CheckFailure(f"reward ucb {ucb:g} outside [0, 1]")
                if np.any(lcb < -1.0) or np.any(lcb > 1.0):
                    raise CheckFailure("cost lcb outside [-1, 1]")

    probe()
    for _ in range(30):
        x = ContextVector(rng.uniform(-1.0, 1.0, 2))
        est.update(x, int(rng.integers(2)), float(rng.integers(2)), rng.choice([-1.0, 1.0], 2))
    probe()
    return "ucb in [0,1] and lcb in [-1,1] before and after 30 extreme updates"


def _check_step_size_doubling() -> str:
    cfg = AdaptiveConfig(delta=0.05, horizon=10_000, budgets=np.array([0.1, 0.2]))
    if cfg.gamma_k(0) != 1.0 / math.sqrt(10_000):
        raise CheckFailure("initial step size is not 1/sqrt(T)")
    for k in range(12):
        if cfg.gamma_k(k + 1) != 2.0 * cfg.gamma_k(k):
            raise CheckFailure(f"step size for regime {k + 1} is not double regime {k}")
    return "gamma_0 = 1/sqrt(T) and exact doubling through regime 12"


class _ListHandler(logging.Handler):
    def __init__(self) -> None:
        super().__init__()
        self.records: list[logging.LogRecord] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.records.append(record)


def _check_regime_cap() -> str:
    env = FiniteContextEnv(
        contexts=[ContextVector(np.zeros(1))],
        weights=np.array([1.0]),
        rewards=np.array([[0.5]]),
        costs=np.array([[[1.0]]]),
        budgets=np.array([0.1]),
    )
    est = OracleEstimator(env)
    cap = ilog(8)
    cfg = AdaptiveConfig(
        delta=0.05,
        horizon=8,
        budgets=env.budgets,
        threshold_mode="practical",
        practical_c=1e-9,  # breaks every round, so the cap must engage
    )
    strategy = AdaptiveDualStrategy(cfg, env.n_actions)
    x = env.contexts[0]
    seen = {strategy.regime}
    log = logging.getLogger("cbwk.dual_strategy")
    handler = _ListHandler()
    log.addHandler(handler)
    old_propagate = log.propagate
    log.propagate = False
    try:
        for _ in range(8):
            strategy.observe(x, 0, 0.5, np.array([1.0]), est)
            if strategy.regime > cap:
                raise CheckFailure(f"regime index {strategy.regime} exceeds ilog(T) = {cap}")
            seen.add(strategy.regime)
    finally:
        log.removeHandler(handler)
        log.propagate = old_propagate
    if len(seen) != cap + 1:
        raise CheckFailure(f"expected {cap + 1} regimes, saw {sorted(seen)}")
    if len(handler.records) != 1:
        raise CheckFailure(f"expected exactly one cap diagnostic, saw {len(handler.records)}")
    return f"regimes {sorted(seen)}, capped at ilog(T) + 1 = {cap + 1} with one diagnostic"


def _check_fairness_antisymmetry() -> str:
    rng = np.random.default_rng(606)
    cases = 0
    for _ in range(50):
        coords = rng.uniform(0.0, 1.0, 3)
        for a in range(3):
            c0 = court_cost(ContextVector(coords, group=0), a)
            c1 = court_cost(ContextVector(coords, group=1), a)
            if not np.array_equal(c0[2:6], -c1[2:6]):
                raise CheckFailure("group swap does not negate the fairness block")
            for c in (c0, c1):
                if not np.array_equal(c[6:10], -c[2:6]):
                    raise CheckFailure("second fairness series is not the negation of the first")
            cases += 1
    return f"group swap negates components 2..5 and 6..9 mirror them, {cases} cases"


def _check_subgradient_inequality() -> str:
    rng = np.random.default_rng(707)
    worst = math.inf
    for _ in range(100):
        sample = random_feasible_sample(rng)
        lam = rng.uniform(0.0, 2.0, sample.d)
        other = rng.uniform(0.0, 2.0, sample.d)
        lhs = dual_objective(other, sample)
        rhs = dual_objective(lam, sample) + float(dual_subgradient(lam, sample) @ (other - lam))
        worst = min(worst, lhs - rhs)
        if lhs < rhs - 1e-9:
            raise CheckFailure(f"subgradient inequality violated by {rhs - lhs:g}")
    return f"100 instances, smallest slack {worst:.3g}"


GOLDEN_CONFIG = {
    "env": {
        "kind": "finite",
        "instance": {
            "contexts": [{"coords": [0.0]}, {"coords": [1.0]}],
            "weights": [0.6, 0.4],
            "rewards": [[0.9, 0.2], [0.3, 0.8]],
            "costs": [[[0.5], [-0.2]], [[0.1], [0.3]]],
            "budgets": [0.1],
        },
    },
    "strategy": {"kind": "pgd_fixed", "gamma": 0.5},
    "estimator": {"kind": "oracle"},
    "horizon": 10,
    "warmup": 0,
    "n_seeds": 2,
    "base_seed": 7,
    "label": "golden",
}

GOLDEN_CSV = (
    "t,avg_reward_mean,avg_reward_se,cost0_mean,cost0_se\n"
    "1,0,0,0.4,0.1\n"
    "2,0.5,0,0.4,0.1\n"
    "3,0.666667,0,0.4,0.0333333\n"
    "4,0.75,0,0.425,0.025\n"
    "5,0.8,0,0.42,0.04\n"
    "6,0.833333,0,0.433333,0.0333333\n"
    "7,0.857143,0,0.392857,0.0214286\n"
    "8,0.8125,0.0625,0.35,0.0125\n"
    "9,0.777778,0,0.316667,0.0166667\n"
    "10,0.75,0.05,0.315,0.015\n"
)


def golden_config() -> ExperimentConfig:
    return ExperimentConfig.from_dict(copy.deepcopy(GOLDEN_CONFIG))


def _check_csv_golden() -> str:
    result = run_batch(golden_config())
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "series.csv"
        emit_csv(result.series, path)
        text = path.read_text()
    if text != GOLDEN_CSV:
        raise CheckFailure("CSV output deviates from the golden file")
    return "10-round toy batch matches the golden CSV byte for byte"


def _check_dual_oracle_equivalence() -> str:
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(5):
        sample = random_feasible_sample(rng)
        gap = abs(minimize_dual(sample).value - brute_force_opt(sample))
        worst = max(worst, gap)
        if gap > 1e-4:
            raise CheckFailure(f"dual vs exact program gap {gap:g} exceeds 1e-4")
    return f"5 instances, worst dual vs exact gap {worst:.2e}"


CHECKS = (
    ("dual_nonnegativity", _check_dual_nonnegativity),
    ("projection_lipschitz", _check_projection_lipschitz),
    ("clipping_ranges", _check_clipping_ranges),
    ("step_size_doubling", _check_step_size_doubling),
    ("regime_cap", _check_regime_cap),
    ("fairness_antisymmetry", _check_fairness_antisymmetry),
    ("subgradient_inequality", _check_subgradient_inequality),
    ("csv_golden", _check_csv_golden),
    ("dual_oracle_equivalence", _check_dual_oracle_equivalence),
)


def run_selftest() -> list[CheckResult]:
    """Run every check; never raises, failures are carried in the results."""
    results = []
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            detail = check()
            ok = True
        except CheckFailure as exc:
            detail = str(exc)
            ok = False
        except Exception as exc:  # a crash is a failure, not an abort
            detail = f"{type(exc).__name__}: {exc}"
            ok = False
        results.append(CheckResult(name=name, ok=ok, detail=detail, seconds=time.perf_counter() - start))
    return results
