"""Primal strategy for finite context sets: per-round constrained LPs.

Maintain an empirical distribution nu_hat over a declared finite context
support. Before observing the round's context, solve

    maximize    E_nu_hat[ sum_a reward_ucb(x, a) pi_a(x) ]
    subject to  E_nu_hat[ sum_a cost_lcb(x, a) pi_a(x) ] <= B + b_t 1

over per-context action distributions pi, then sample the played action from
pi(x_t). The slack b_t comes from one of three schedules:

  soft          b_t = xi_{t-1} >= 0, the total-variation error bound of
                nu_hat (keeps the LP feasible, costs may overshoot);
  hard_null     b_t = -(2 alpha + beta + Xi)/T, a constant negative slack;
                needs a zero-cost action so the tightened LP stays feasible;
  hard_general  b_t = -(2 alpha + beta + 2 Xi)/T + xi_{t-1}.

Here alpha is a horizon-level deviation bound, beta the cumulated optimism
width, and Xi the summed total-variation errors. Infeasible LPs fall back to
the declared zero-cost action when one exists, else to a uniformly random
action, counting the event.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ContextVector, validate_budget
from .estimators import BaseEstimator, BetaAccumulator, theoretical_beta_bound
from .simplex import LpResult, linprog_simplex

logger = logging.getLogger(__name__)

XI_CONSTANT = math.sqrt(2.0)
RESUBSTITUTION_TOL = 1e-7


def xi(t: int, delta: float, support_size: int, xi_constant: float = XI_CONSTANT) -> float:
    """Total-variation error bound of the empirical distribution after t draws.

    xi_constant * sqrt(|X| ln(2/delta) / max(t, 1)), capped at 1. The risk
    ``delta`` enters directly (callers quarter it themselves).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if support_size < 1:
        raise ValueError("support_size must be at least 1")
    value = xi_constant * math.sqrt(support_size * math.log(2.0 / delta) / max(t, 1))
    return min(value, 1.0)


def xi_partial_sum(T: int, delta: float, support_size: int, xi_constant: float = XI_CONSTANT) -> float:
    """Sum of xi(t-1, delta, |X|) over rounds t = 1..T; grows as O(sqrt(T))."""
    if T < 1:
        raise ValueError("T must be at least 1")
    return float(sum(xi(t - 1, delta, support_size, xi_constant) for t in range(1, T + 1)))


def alpha_horizon(T: int, delta: float, d: int) -> float:
    """Horizon-level deviation bound sqrt(2 T ln((d+1)/(delta/4))).

    ``delta`` is the overall risk level; a quarter of it is allotted to this
    bound internally.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if d < 1:
        raise ValueError("d must be at least 1")
    return math.sqrt(2.0 * T * math.log((d + 1) / (delta / 4.0)))


def alpha_anytime(t: int, delta: float, d: int, T: int) -> float:
    """Anytime deviation bound sqrt(2 t ln(2 (d+1) T / (delta/4)))."""
    if t < 0 or T < 1:
        raise ValueError("require t >= 0 and T >= 1")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if d < 1:
        raise ValueError("d must be at least 1")
    return math.sqrt(2.0 * t * math.log(2.0 * (d + 1) * T / (delta / 4.0)))


def overshoot_margins(T: int, alpha: float, beta: float, xi_sum: float) -> tuple[float, float]:
    """Per-round overshoot allowances ((2a+b+Xi)/T, (2a+b+2Xi)/T); second >= first."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if min(alpha, beta, xi_sum) < 0:
        raise ValueError("alpha, beta and xi_sum must be nonnegative")
    base = (2.0 * alpha + beta + xi_sum) / T
    general = (2.0 * alpha + beta + 2.0 * xi_sum) / T
    return base, general


class EmpiricalContextDistribution:
    """Running empirical distribution over a declared finite context support.

    Contexts are declared up front; unseen contexts carry empirical mass 0.
    Before any observation the distribution is uniform (it only feeds the
    round-1 policy, solved under fully optimistic estimates). The ``exact``
    constructor freezes known probabilities with xi identically 0, for
    oracle-instrumented runs.
    """

    def __init__(self, support, xi_constant: float = XI_CONSTANT):
        self.support = list(support)
        if not self.support:
            raise ValueError("support must be nonempty")
        self.xi_constant = float(xi_constant)
        self.counts = np.zeros(len(self.support), dtype=np.int64)
        self.t = 0
        self.version = 0
        self._exact_probs: np.ndarray | None = None
        self._index = {x.key(): i for i, x in enumerate(self.support)}
        if len(self._index) != len(self.support):
            raise ValueError("support contexts must be distinct")

    @classmethod
    def exact(cls, support, probabilities) -> "EmpiricalContextDistribution":
        dist = cls(support)
        probs = np.asarray(probabilities, dtype=float)
        if probs.shape != (len(dist.support),) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("probabilities must be a distribution over the support")
        dist._exact_probs = probs
        return dist

    @property
    def is_exact(self) -> bool:
        return self._exact_probs is not None

    def index_of(self, x: ContextVector) -> int:
        try:
            return self._index[x.key()]
        except KeyError:
            raise ValueError("context outside the declared support") from None

    def update(self, x: ContextVector) -> None:
        i = self.index_of(x)
        if self.is_exact:
            return
        self.counts[i] += 1
        self.t += 1
        self.version += 1

    def probabilities(self) -> np.ndarray:
        if self.is_exact:
            return self._exact_probs.copy()
        if self.t == 0:
            return np.full(len(self.support), 1.0 / len(self.support))
        return self.counts / self.t

    def xi(self, delta: float) -> float:
        if self.is_exact:
            return 0.0
        return xi(self.t, delta, len(self.support), self.xi_constant)


@dataclass
class SlackSchedule:
    """Round-t slack b_t for the LP right-hand side B + b_t 1.

    Modes: "soft" (positive total-variation slack), "hard_null" (constant
    negative slack), "hard_general" (negative base plus total-variation term).
    A quarter of ``delta`` is allotted to each deviation source internally.
    ``beta_mode`` picks the cumulated-width term for the hard modes: the
    realized running value, or its closed-form bound frozen up front.
    """

    mode: str
    delta: float
    horizon: int
    d: int
    support_size: int
    xi_constant: float = XI_CONSTANT
    beta_mode: str = "realized"
    beta_constant: float = 1.0
    alpha: float = field(init=False)
    xi_sum: float = field(init=False)
    beta_frozen: float = field(init=False)

    def __post_init__(self) -> None:
        if self.mode not in ("soft", "hard_null", "hard_general"):
            raise ValueError(f"unknown slack mode {self.mode!r}")
        if self.beta_mode not in ("realized", "theoretical"):
            raise ValueError(f"unknown beta_mode {self.beta_mode!r}")
        self.alpha = alpha_horizon(self.horizon, self.delta, self.d)
        self.xi_sum = xi_partial_sum(self.horizon, self.delta / 4.0, self.support_size, self.xi_constant)
        self.beta_frozen = theoretical_beta_bound(self.horizon, self.delta / 4.0, self.beta_constant)

    def beta_value(self, realized_beta: float) -> float:
        return realized_beta if self.beta_mode == "realized" else self.beta_frozen

    def margins(self, realized_beta: float) -> tuple[float, float]:
        return overshoot_margins(self.horizon, self.alpha, self.beta_value(realized_beta), self.xi_sum)

    def slack(self, dist: EmpiricalContextDistribution, realized_beta: float) -> float:
        if self.mode == "soft":
            return dist.xi(self.delta / 4.0)
        base, general = self.margins(realized_beta)
        if self.mode == "hard_null":
            return -base
        return -general + dist.xi(self.delta / 4.0)


@dataclass
class LpPolicySolution:
    """Per-context action distributions with the LP objective value."""

    policy: np.ndarray  # |X| x |A|, rows are distributions when feasible
    objective: float
    feasible: bool


def solve_constrained_policy(
    weights: np.ndarray,
    ucb_rewards: np.ndarray,
    lcb_costs: np.ndarray,
    rhs: np.ndarray,
) -> LpPolicySolution:
    """Maximize the weighted mean reward subject to d weighted cost caps.

    Variables are pi_a(x) over the |X| x |A| grid: one simplex constraint per
    context, one <= constraint per cost component. Returns feasible=False when
    the tightened constraints admit no policy.
    """
    weights = np.asarray(weights, dtype=float)
    ucb_rewards = np.asarray(ucb_rewards, dtype=float)
    lcb_costs = np.asarray(lcb_costs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n_ctx, n_actions = ucb_rewards.shape
    d = rhs.size
    if weights.shape != (n_ctx,) or lcb_costs.shape != (n_ctx, n_actions, d):
        raise ValueError("inconsistent table shapes")

    n = n_ctx * n_actions
    objective = (weights[:, None] * ucb_rewards).reshape(n)
    a_eq = np.zeros((n_ctx, n))
    for i in range(n_ctx):
        a_eq[i, i * n_actions : (i + 1) * n_actions] = 1.0
    b_eq = np.ones(n_ctx)
    a_ub = (weights[:, None, None] * lcb_costs).reshape(n, d).T
    result: LpResult = linprog_simplex(objective, A_ub=a_ub, b_ub=rhs, A_eq=a_eq, b_eq=b_eq, maximize=True)

    if result.status != "optimal":
        if result.status != "infeasible":
            logger.warning("policy LP ended with status %s; treating as infeasible", result.status)
        return LpPolicySolution(policy=np.full((n_ctx, n_actions), 1.0 / n_actions), objective=float("nan"), feasible=False)

    policy = np.clip(result.x.reshape(n_ctx, n_actions), 0.0, None)
    policy /= policy.sum(axis=1, keepdims=True)
    achieved_cost = np.einsum("i,ia,iak->k", weights, policy, lcb_costs)
    violation = float(np.max(achieved_cost - rhs, initial=0.0))
    if violation > RESUBSTITUTION_TOL:
        logger.warning("LP re-substitution violation %.3e exceeds %.1e", violation, RESUBSTITUTION_TOL)
    return LpPolicySolution(policy=policy, objective=result.value, feasible=True)


class PrimalStrategy:
    """LP-based strategy: solve the slackened program, sample from its policy.

    The policy for round t is computed from the state before round t (the LP
    never sees x_t; x_t only selects which row to sample from). Solutions are
    cached on (estimator version, distribution version, slack), so runs with
    frozen oracle inputs solve a single LP. ``beta_tracker`` is the shared
    accumulator of optimism widths maintained by the caller.
    """

    def __init__(
        self,
        dist: EmpiricalContextDistribution,
        schedule: SlackSchedule,
        budgets: np.ndarray,
        n_actions: int,
        null_action: int | None = None,
        beta_tracker: BetaAccumulator | None = None,
    ):
        self.dist = dist
        self.schedule = schedule
        self.budgets = validate_budget(budgets)
        self.n_actions = int(n_actions)
        self.null_action = null_action
        self.beta_tracker = beta_tracker if beta_tracker is not None else BetaAccumulator()
        self.fallback_count = 0
        self.solve_count = 0
        self._cache_key: tuple | None = None
        self._cached: LpPolicySolution | None = None

    @property
    def dual_vector(self) -> np.ndarray:
        return np.zeros(self.budgets.size)

    @property
    def regime(self) -> int:
        return 0

    def current_policy(self, est: BaseEstimator) -> tuple[LpPolicySolution, float]:
        slack = self.schedule.slack(self.dist, self.beta_tracker.value)
        key = (est.version, self.dist.version, slack)
        if key != self._cache_key:
            support = self.dist.support
            ucb = np.array([[est.reward_ucb(x, a) for a in range(self.n_actions)] for x in support])
            lcb = np.stack([[est.cost_lcb(x, a) for a in range(self.n_actions)] for x in support])
            rhs = self.budgets + slack
            self._cached = solve_constrained_policy(self.dist.probabilities(), ucb, lcb, rhs)
            self._cache_key = key
            self.solve_count += 1
        return self._cached, slack

    def choose(self, x: ContextVector, est: BaseEstimator, rng: np.random.Generator) -> int:
        i = self.dist.index_of(x)
        solution, _ = self.current_policy(est)
        if not solution.feasible:
            if self.fallback_count == 0:
                logger.info(
                    "infeasible policy LP; falling back to %s",
                    "null action" if self.null_action is not None else "uniform action",
                )
            self.fallback_count += 1
            if self.null_action is not None:
                return self.null_action
            return int(rng.integers(self.n_actions))
        row = np.clip(solution.policy[i], 0.0, None)
        row = row / row.sum()
        return int(rng.choice(self.n_actions, p=row))

    def observe(self, x: ContextVector, a: int, r: float, c: np.ndarray, est: BaseEstimator) -> None:
        self.dist.update(x)

    # Context counts are action-free, so warm-up rounds may feed them too.
    warmup_observe = observe
