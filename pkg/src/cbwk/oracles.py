"""Benchmark oracles: dual minimization, exact LP optima, dual-norm checks.

The static benchmark OPT(r, c, B) equals, by strong duality,

    min over lambda >= 0 of G(lambda),
    G(lambda) = E_X[ max_a { r(X, a) - < c(X, a) - B, lambda > } ].

This module evaluates G and its subgradients on finite samples (either i.i.d.
context draws or an explicit finite distribution), minimizes G by projected
subgradient descent with iterate averaging, averages repeated estimates into
an OPT estimate with a standard error, solves small finite instances exactly
by LP, and checks the closed-form bounds on the optimal dual norm:

    ||lambda*_{B-b1}|| <= (OPT(B-b1) - OPT(Btilde)) / min(B - b1 - Btilde)

for 0 <= Btilde < B - b1 with the problem feasible below Btilde, and, when a
zero-cost action exists and b <= min(B)/2,

    ||lambda*_{B-b1}|| <= 2 (OPT(B) - OPT(0)) / min(B).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import Environment, FiniteContextEnv
from .dual_strategy import action_bounds, select_action
from .estimators import BaseEstimator
from .primal_strategy import LpPolicySolution, solve_constrained_policy

NORM_WARN_FACTOR = 10.0


class InfeasibleInstanceError(ValueError):
    """No static policy satisfies the average cost constraints."""


@dataclass(frozen=True)
class DualSample:
    """Expected reward/cost tables over a finite weighted context set."""

    rewards: np.ndarray  # S x A
    costs: np.ndarray  # S x A x d
    weights: np.ndarray  # S, sums to 1
    budgets: np.ndarray  # d

    def __post_init__(self) -> None:
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))
        object.__setattr__(self, "costs", np.asarray(self.costs, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "budgets", np.asarray(self.budgets, dtype=float))
        s, a = self.rewards.shape
        if self.costs.shape[:2] != (s, a) or self.costs.ndim != 3:
            raise ValueError("costs must have shape S x A x d")
        if self.weights.shape != (s,) or np.any(self.weights < 0):
            raise ValueError("weights must be a nonnegative S-vector")
        if not math.isclose(float(self.weights.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("weights must sum to 1")
        if self.budgets.shape != (self.costs.shape[2],):
            raise ValueError("budgets must match the cost dimension")

    @property
    def d(self) -> int:
        return self.budgets.size

    def with_budgets(self, budgets) -> "DualSample":
        return replace(self, budgets=np.asarray(budgets, dtype=float))

    @classmethod
    def from_env_sample(cls, env: Environment, budgets, n_samples: int, rng: np.random.Generator) -> "DualSample":
        """Tabulate expected rewards/costs over n_samples context draws."""
        if n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        budgets = np.asarray(budgets, dtype=float)
        if hasattr(env, "sample_batch") and hasattr(env, "batch_expected_tables"):
            coords, groups = env.sample_batch(n_samples, rng)
            rewards, costs = env.batch_expected_tables(coords, groups)
        else:
            contexts = [env.sample_context(rng) for _ in range(n_samples)]
            rewards = np.array([[env.expected_reward(x, a) for a in range(env.n_actions)] for x in contexts])
            costs = np.stack([[env.expected_cost(x, a) for a in range(env.n_actions)] for x in contexts])
        weights = np.full(n_samples, 1.0 / n_samples)
        return cls(rewards=rewards, costs=costs, weights=weights, budgets=budgets)

    @classmethod
    def from_finite_instance(cls, env: FiniteContextEnv, budgets=None) -> "DualSample":
        """Exact tables for an explicit finite-context instance."""
        budgets = env.budgets if budgets is None else np.asarray(budgets, dtype=float)
        return cls(rewards=env.rewards.copy(), costs=env.costs.copy(), weights=env.weights.copy(), budgets=budgets)


def _validate_lambda(lam: np.ndarray, d: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (d,):
        raise ValueError("dual vector has the wrong dimension")
    if np.any(lam < 0):
        raise ValueError("dual vector must be nonnegative")
    return lam


def dual_objective(lam: np.ndarray, sample: DualSample) -> float:
    """Weighted mean over contexts of max_a { r - <c - B, lambda> }."""
    lam = _validate_lambda(lam, sample.d)
    scores = sample.rewards - (sample.costs - sample.budgets) @ lam
    return float(sample.weights @ scores.max(axis=1))


def dual_subgradient(lam: np.ndarray, sample: DualSample) -> np.ndarray:
    """Subgradient B - E[c(X, a*(X))] at the per-context argmax actions."""
    lam = _validate_lambda(lam, sample.d)
    scores = sample.rewards - (sample.costs - sample.budgets) @ lam
    best = scores.argmax(axis=1)
    chosen = sample.costs[np.arange(sample.costs.shape[0]), best]
    return sample.budgets - sample.weights @ chosen


@dataclass
class DualSolution:
    lam: np.ndarray
    value: float
    converged: bool
    iterations: int
    schedule: str


def _norm_warning(lam: np.ndarray, budgets: np.ndarray) -> None:
    floor = float(budgets.min())
    if floor > 0 and float(np.linalg.norm(lam)) > NORM_WARN_FACTOR / floor:
        warnings.warn(
            f"dual norm {np.linalg.norm(lam):.3g} exceeds {NORM_WARN_FACTOR:g}/min(B); "
            "the instance may be near-infeasible",
            RuntimeWarning,
        )


def minimize_dual(
    sample: DualSample,
    iters: int = 5000,
    schedule: str = "geometric",
    eta0: float | None = None,
    tol: float = 1e-6,
    lam0: np.ndarray | None = None,
) -> DualSolution:
    """Projected subgradient descent on G with iterate averaging.

    "geometric": normalized-direction steps (length eta, independent of the
    subgradient magnitude, so flat near-optimal slopes cannot stall the
    iterate); the length halves every stage, each stage restarts from the
    previous stage's averaged iterate, and the best-valued stage average is
    returned. A zero subgradient certifies a global minimizer and stops
    early. "sqrt": classic eta0/sqrt(k) decay with tail averaging over the
    last half. Both project onto lambda >= 0 every step. ``converged`` is
    False when the final improvement still exceeded ``tol``.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    d = sample.d
    eta0 = (1.0 / math.sqrt(d)) if eta0 is None else float(eta0)
    lam = np.zeros(d) if lam0 is None else _validate_lambda(lam0, d).copy()

    best_lam = lam.copy()
    best_val = dual_objective(lam, sample)
    used = 0

    if schedule == "sqrt":
        tail_from = iters // 2
        tail_sum = np.zeros(d)
        tail_n = 0
        mid_val = None
        for k in range(1, iters + 1):
            g = dual_subgradient(lam, sample)
            lam = np.maximum(lam - (eta0 / math.sqrt(k)) * g, 0.0)
            if k > tail_from:
                tail_sum += lam
                tail_n += 1
                if mid_val is None and k >= tail_from + (iters - tail_from) // 2:
                    mid_val = dual_objective(tail_sum / tail_n, sample)
        used = iters
        avg = tail_sum / max(tail_n, 1)
        avg_val = dual_objective(avg, sample)
        if avg_val < best_val:
            best_lam, best_val = avg, avg_val
        converged = mid_val is not None and abs(mid_val - avg_val) <= max(tol, 1e-8)
    elif schedule == "geometric":
        stage_len = max(64, iters // 20)
        eta = eta0
        checkpoint_val = None
        hit_zero = False
        while used < iters:
            if checkpoint_val is None and used >= 3 * iters // 4:
                checkpoint_val = best_val
            m = min(stage_len, iters - used)
            stage_sum = np.zeros(d)
            done = 0
            for _ in range(m):
                g = dual_subgradient(lam, sample)
                norm = float(np.linalg.norm(g))
                if norm == 0.0:
                    hit_zero = True  # 0 in the subdifferential: global minimizer
                    break
                lam = np.maximum(lam - (eta / norm) * g, 0.0)
                stage_sum += lam
                done += 1
            used += done
            if hit_zero:
                val = dual_objective(lam, sample)
                if val < best_val:
                    best_lam, best_val = lam.copy(), val
                break
            avg = stage_sum / done
            val = dual_objective(avg, sample)
            if val < best_val:
                best_lam, best_val = avg.copy(), val
            lam = avg
            eta *= 0.5
        converged = hit_zero or (checkpoint_val is not None and checkpoint_val - best_val <= max(tol, 1e-8))
    else:
        raise ValueError(f"unknown schedule {schedule!r}")

    _norm_warning(best_lam, sample.budgets)
    return DualSolution(lam=best_lam, value=best_val, converged=converged, iterations=used, schedule=schedule)


@dataclass
class OptEstimate:
    """Averaged OPT estimate: mean value, standard error, averaged dual vector."""

    value: float
    stderr: float
    reps: int
    lambda_star: np.ndarray

    def __post_init__(self) -> None:
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")
        if not (-1e-6 <= self.value <= 1 + 1e-6):
            warnings.warn(f"OPT estimate {self.value:.4g} outside [0, 1]", RuntimeWarning)

    @property
    def two_stderr(self) -> float:
        return 2.0 * self.stderr


def estimate_opt(
    env: Environment,
    budgets,
    n_samples: int = 10000,
    reps: int = 100,
    seed: int = 0,
    iters: int = 2000,
    schedule: str = "geometric",
) -> OptEstimate:
    """Average ``reps`` independent sampled dual minimizations of OPT(r, c, B)."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(reps)]
    values = np.empty(reps)
    lams = np.empty((reps, np.asarray(budgets).size))
    for j, rng in enumerate(streams):
        sample = DualSample.from_env_sample(env, budgets, n_samples, rng)
        sol = minimize_dual(sample, iters=iters, schedule=schedule)
        values[j] = sol.value
        lams[j] = sol.lam
    stderr = float(values.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return OptEstimate(value=float(values.mean()), stderr=stderr, reps=reps, lambda_star=lams.mean(axis=0))


def brute_force_policy(sample: DualSample) -> LpPolicySolution:
    """Exact optimal static policy of the finite instance, by LP."""
    solution = solve_constrained_policy(sample.weights, sample.rewards, sample.costs, sample.budgets)
    if not solution.feasible:
        raise InfeasibleInstanceError("no static policy satisfies the average cost constraints")
    return solution


def brute_force_opt(sample: DualSample) -> float:
    """Exact OPT of the finite instance, by LP."""
    return brute_force_policy(sample).objective


@dataclass
class NormBoundCheck:
    """One dual-norm bound evaluation: lhs = ||lambda*||, rhs = the bound."""

    lhs: float
    rhs: float
    holds: bool
    lam: np.ndarray
    opt_margined: float
    opt_reference: float


def _refined_minimizer(sample: DualSample, exact_opt: float, iters: int, gap_tol: float) -> DualSolution:
    """Minimize G, doubling the budget until the duality gap is below gap_tol."""
    sol = minimize_dual(sample, iters=iters)
    rounds = 0
    while sol.value - exact_opt > gap_tol and rounds < 5:
        iters *= 2
        retry = minimize_dual(sample, iters=iters, lam0=sol.lam)
        if retry.value < sol.value:
            sol = retry
        rounds += 1
    if sol.value - exact_opt > gap_tol:
        warnings.warn(
            f"dual minimization gap {sol.value - exact_opt:.2e} above {gap_tol:.0e}; "
            "norm-bound check may be loose",
            RuntimeWarning,
        )
    return sol


def lambda_norm_bound_check(sample: DualSample, b: float, b_tilde, iters: int = 4000, gap_tol: float = 1e-8) -> NormBoundCheck:
    """Check ||lambda*_{B-b1}|| <= (OPT(B-b1) - OPT(Btilde)) / min(B-b1-Btilde)."""
    budgets = sample.budgets
    b_tilde = np.asarray(b_tilde, dtype=float)
    if not (0.0 <= b < float(budgets.min())):
        raise ValueError("require 0 <= b < min(B)")
    gap = budgets - b - b_tilde
    if b_tilde.shape != budgets.shape or np.any(b_tilde < 0) or np.any(gap <= 0):
        raise ValueError("require 0 <= Btilde < B - b componentwise")
    margined = sample.with_budgets(budgets - b)
    opt_margined = brute_force_opt(margined)
    opt_reference = brute_force_opt(sample.with_budgets(b_tilde))
    sol = _refined_minimizer(margined, opt_margined, iters, gap_tol)
    lhs = float(np.linalg.norm(sol.lam))
    rhs = (opt_margined - opt_reference) / float(gap.min())
    return NormBoundCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + 1e-6, lam=sol.lam, opt_margined=opt_margined, opt_reference=opt_reference)


def null_action_norm_bound_check(sample: DualSample, b: float, iters: int = 4000, gap_tol: float = 1e-8) -> NormBoundCheck:
    """Check ||lambda*_{B-b1}|| <= 2 (OPT(B) - OPT(0)) / min(B).

    Valid when a zero-cost action exists (so the zero-budget problem stays
    feasible) and b <= min(B)/2.
    """
    budgets = sample.budgets
    if not (0.0 <= b <= float(budgets.min()) / 2.0):
        raise ValueError("require 0 <= b <= min(B)/2")
    opt_full = brute_force_opt(sample)
    opt_zero = brute_force_opt(sample.with_budgets(np.zeros(sample.d)))
    margined = sample.with_budgets(budgets - b)
    opt_margined = brute_force_opt(margined)
    sol = _refined_minimizer(margined, opt_margined, iters, gap_tol)
    lhs = float(np.linalg.norm(sol.lam))
    rhs = 2.0 * (opt_full - opt_zero) / float(budgets.min())
    return NormBoundCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + 1e-6, lam=sol.lam, opt_margined=opt_margined, opt_reference=opt_zero)


def mixed_policy_action(
    x,
    est: BaseEstimator,
    lam_fixed: np.ndarray,
    target: np.ndarray,
    n_actions: int,
) -> int:
    """Argmax of reward_ucb - <cost_lcb - target, lambda_fixed>; no state change."""
    lam_fixed = _validate_lambda(np.asarray(lam_fixed, dtype=float), np.asarray(target).size)
    ucb, lcb = action_bounds(x, est, n_actions)
    return select_action(ucb, lcb, np.asarray(target, dtype=float), lam_fixed)
