"""Projected-gradient dual strategies, with fixed and adaptive step sizes.

Fixed step: keep nonnegative dual variables lambda over the d cost components.
Each round score every action by

    score(a) = reward_ucb(x, a) - < cost_lcb(x, a) - target, lambda >

with target = B - margin, play the argmax (ties to the lowest action index),
then ascend the dual on the played action's optimistic cost:

    lambda <- ( lambda + gamma * (cost_lcb(x, a) - target) )_+ .

Adaptive step: run the fixed-step strategy in regimes k = 0, 1, 2, ... with
step sizes gamma_k = 2^k / sqrt(T). Within regime k, accumulate the realized
costs since the regime start; when the Euclidean norm of the positive part of
(sum of realized costs - rounds * target) exceeds a threshold M_k, the current
step size is deemed too small: start regime k+1 at the next round with doubled
step size, resetting lambda to zero while estimators persist. Thresholds come
in a theoretical form, 4 sqrt(T) + 20 sqrt(d) * Upsilon at shrinking risk
levels delta / (k+2)^2, and a practical form c * d * sqrt(T ln(T (k+2))).
The regime count never exceeds ilog(T) + 1; hitting the cap logs a diagnostic
and stays in the final regime.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import ContextVector, validate_budget
from .estimators import BaseEstimator, theoretical_beta_bound

logger = logging.getLogger(__name__)


def ilog(x) -> int:
    """Upper integer part of the base-2 logarithm; errors on x <= 0."""
    if x <= 0:
        raise ValueError("ilog requires a positive argument")
    if float(x).is_integer():
        return max(int(x) - 1, 0).bit_length()
    return math.ceil(math.log2(x))


def upsilon(T: int, delta: float, d: int, beta_bound: float) -> float:
    """max(beta_bound, 2 sqrt(dT ln(T^2/(delta/4))), sqrt(2T ln(2(d+1)T/(delta/4))))."""
    if T < 1 or not (0.0 < delta < 1.0) or d < 1:
        raise ValueError("require T >= 1, d >= 1, delta in (0, 1)")
    quarter = delta / 4.0
    second = 2.0 * math.sqrt(d * T * math.log(T * T / quarter))
    third = math.sqrt(2.0 * T * math.log(2.0 * (d + 1) * T / quarter))
    return max(float(beta_bound), second, third)


def select_action(
    ucb_rewards: np.ndarray,
    lcb_costs: np.ndarray,
    target: np.ndarray,
    lam: np.ndarray,
) -> int:
    """Argmax of ucb(a) - <lcb(a) - target, lambda>, ties to the lowest index."""
    ucb_rewards = np.asarray(ucb_rewards, dtype=float)
    if ucb_rewards.size == 0:
        raise ValueError("empty action set")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("dual variables must be nonnegative")
    penalties = (np.asarray(lcb_costs, dtype=float) - target) @ lam
    return int(np.argmax(ucb_rewards - penalties))


def dual_update(lam: np.ndarray, lcb_cost_played: np.ndarray, target: np.ndarray, gamma: float) -> np.ndarray:
    """Projected ascent step (lambda + gamma (lcb - target))_+ ."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.maximum(lam + gamma * (np.asarray(lcb_cost_played) - target), 0.0)


def action_bounds(x: ContextVector, est: BaseEstimator, n_actions: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack reward UCBs (|A|,) and cost LCBs (|A|, d) for one context."""
    ucb = np.array([est.reward_ucb(x, a) for a in range(n_actions)])
    lcb = np.stack([est.cost_lcb(x, a) for a in range(n_actions)])
    return ucb, lcb


@dataclass
class PgdConfig:
    """Fixed-step configuration: step size, risk level, budgets, margin, horizon.

    ``margin`` is the full vector subtracted from the budgets; build it with
    ``fairness.uniform_margin_vector`` (margin on every component) or
    ``fairness.spend_margin_vector`` (margin on the spend components only).
    ``margin_b`` records the scalar margin for reporting. A uniform nonzero
    margin outside (0, min B) triggers a warning (the per-regime cost
    guarantee assumes 0 < b < min B), never an error.
    """

    gamma: float
    delta: float
    budgets: np.ndarray
    horizon: int
    margin: np.ndarray = None  # type: ignore[assignment]
    margin_b: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.budgets = validate_budget(self.budgets)
        if self.margin is None:
            self.margin = np.full(self.budgets.size, float(self.margin_b))
        self.margin = np.asarray(self.margin, dtype=float)
        if self.margin.shape != self.budgets.shape:
            raise ValueError("margin vector must match the budget dimension")
        if np.allclose(self.margin, self.margin[0]) and self.margin[0] != 0.0:
            b = float(self.margin[0])
            if not (0.0 < b < float(self.budgets.min())):
                warnings.warn(
                    f"uniform margin b={b:g} outside (0, min B={self.budgets.min():g}); "
                    "the per-regime cost guarantee assumes 0 < b < min B",
                    RuntimeWarning,
                )

    @property
    def target(self) -> np.ndarray:
        return self.budgets - self.margin

    @property
    def d(self) -> int:
        return self.budgets.size


@dataclass
class PgdState:
    """Mutable fixed-step state: dual vector, round count, regime cost sum.

    ``regime_cost_sum`` accumulates realized costs minus the target; the
    adaptive strategy reads it for the regime-break test.
    """

    lam: np.ndarray
    t: int = 0
    regime_cost_sum: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.lam = np.asarray(self.lam, dtype=float)
        if np.any(self.lam < 0):
            raise ValueError("dual variables must be nonnegative")
        if self.regime_cost_sum is None:
            self.regime_cost_sum = np.zeros_like(self.lam)


class FixedStepDualStrategy:
    """Fixed-step projected-gradient dual strategy."""

    def __init__(self, cfg: PgdConfig, n_actions: int):
        self.cfg = cfg
        self.n_actions = int(n_actions)
        self.state = PgdState(lam=np.zeros(cfg.d))
        # Running sum of (lcb - target) over played actions; supports the
        # exact telescoping audit ||(sum)_+|| <= ||lambda_t|| / gamma.
        self._lcb_excess_sum = np.zeros(cfg.d)

    @property
    def dual_vector(self) -> np.ndarray:
        return self.state.lam

    @property
    def regime(self) -> int:
        return 0

    @property
    def gamma(self) -> float:
        return self.cfg.gamma

    def choose(self, x: ContextVector, est: BaseEstimator, rng: np.random.Generator) -> int:
        ucb, lcb = action_bounds(x, est, self.n_actions)
        return select_action(ucb, lcb, self.cfg.target, self.state.lam)

    def observe(self, x: ContextVector, a: int, r: float, c: np.ndarray, est: BaseEstimator) -> None:
        lcb = est.cost_lcb(x, a)  # estimator still holds the pre-round state
        self._lcb_excess_sum += lcb - self.cfg.target
        self.state.lam = dual_update(self.state.lam, lcb, self.cfg.target, self.cfg.gamma)
        self.state.t += 1
        self.state.regime_cost_sum += np.asarray(c, dtype=float) - self.cfg.target

    def telescoping_slack(self) -> float:
        """||lambda_t|| / gamma minus ||(sum of (lcb - target))_+||; >= 0 always."""
        excess = float(np.linalg.norm(np.clip(self._lcb_excess_sum, 0.0, None)))
        return float(np.linalg.norm(self.state.lam)) / self.cfg.gamma - excess


@dataclass
class AdaptiveConfig:
    """Adaptive-step configuration.

    ``threshold_mode`` picks the regime-break threshold: "theoretical" uses
    4 sqrt(T) + 20 sqrt(d) Upsilon at risk delta/(k+2)^2 with the closed-form
    beta bound scaled by ``beta_constant``; "practical" uses
    practical_c * d * sqrt(T ln(T (k+2))).
    """

    delta: float
    horizon: int
    budgets: np.ndarray
    margin: np.ndarray = None  # type: ignore[assignment]
    margin_b: float = 0.0
    threshold_mode: str = "practical"
    practical_c: float = 0.01
    beta_constant: float = 1.0

    def __post_init__(self) -> None:
        if self.threshold_mode not in ("theoretical", "practical"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.practical_c <= 0:
            raise ValueError("practical_c must be positive")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.budgets = validate_budget(self.budgets)
        if self.margin is None:
            self.margin = np.full(self.budgets.size, float(self.margin_b))
        self.margin = np.asarray(self.margin, dtype=float)
        if self.margin.shape != self.budgets.shape:
            raise ValueError("margin vector must match the budget dimension")

    @property
    def d(self) -> int:
        return self.budgets.size

    @property
    def target(self) -> np.ndarray:
        return self.budgets - self.margin

    def gamma_k(self, k: int) -> float:
        return (2.0**k) / math.sqrt(self.horizon)


def regime_threshold(k: int, cfg: AdaptiveConfig) -> float:
    """Regime-break threshold M_k in the configured mode."""
    if k < 0:
        raise ValueError("regime index must be nonnegative")
    T, d = cfg.horizon, cfg.d
    if cfg.threshold_mode == "practical":
        return cfg.practical_c * d * math.sqrt(T * math.log(T * (k + 2)))
    risk = cfg.delta / (k + 2) ** 2
    beta_bar = theoretical_beta_bound(T, risk, cfg.beta_constant)
    return 4.0 * math.sqrt(T) + 20.0 * math.sqrt(d) * upsilon(T, risk, d, beta_bar)


def margin_bT(T: int, delta: float, d: int, cfg: AdaptiveConfig | None = None) -> float:
    """Automatic margin (1 + ilog T)(M_{T,delta,ilog T} + 2 sqrt(d)) / T."""
    if cfg is None:
        cfg = AdaptiveConfig(delta=delta, horizon=T, budgets=np.ones(d), threshold_mode="theoretical")
    K = ilog(T)
    return (1 + K) * (regime_threshold(K, cfg) + 2.0 * math.sqrt(d)) / T


@dataclass
class RegimeState:
    """Current regime of the adaptive strategy: index, start round, step, threshold."""

    k: int
    start_round: int
    gamma: float
    threshold: float
    inner: PgdState


class AdaptiveDualStrategy:
    """Doubling-step meta strategy over fixed-step regimes."""

    def __init__(self, cfg: AdaptiveConfig, n_actions: int):
        self.cfg = cfg
        self.n_actions = int(n_actions)
        self.max_regime = ilog(cfg.horizon)
        self.regime_state = RegimeState(
            k=0,
            start_round=1,
            gamma=cfg.gamma_k(0),
            threshold=regime_threshold(0, cfg),
            inner=PgdState(lam=np.zeros(cfg.d)),
        )
        self._cap_warned = False
        self.t = 0

    @property
    def dual_vector(self) -> np.ndarray:
        return self.regime_state.inner.lam

    @property
    def regime(self) -> int:
        return self.regime_state.k

    @property
    def gamma(self) -> float:
        return self.regime_state.gamma

    def choose(self, x: ContextVector, est: BaseEstimator, rng: np.random.Generator) -> int:
        ucb, lcb = action_bounds(x, est, self.n_actions)
        return select_action(ucb, lcb, self.cfg.target, self.regime_state.inner.lam)

    def observe(self, x: ContextVector, a: int, r: float, c: np.ndarray, est: BaseEstimator) -> None:
        rs = self.regime_state
        lcb = est.cost_lcb(x, a)
        rs.inner.lam = dual_update(rs.inner.lam, lcb, self.cfg.target, rs.gamma)
        self._record_cost(c)

    def warmup_observe(self, x: ContextVector, a: int, r: float, c: np.ndarray, est: BaseEstimator) -> None:
        """Feed a warm-up round's realized cost to the regime-break test.

        The stopping rule sums realized costs from round 1, so warm-up rounds
        count toward the break statistic even though the dual vector stays
        frozen until the strategy starts choosing actions.
        """
        self._record_cost(c)

    def _record_cost(self, c: np.ndarray) -> None:
        rs = self.regime_state
        self.t += 1
        rs.inner.t += 1
        rs.inner.regime_cost_sum += np.asarray(c, dtype=float) - self.cfg.target
        excess = float(np.linalg.norm(np.clip(rs.inner.regime_cost_sum, 0.0, None)))
        if excess > rs.threshold:
            if rs.k >= self.max_regime:
                if not self._cap_warned:
                    logger.warning(
                        "regime cap ilog(T)+1 = %d reached at round %d; staying in regime %d",
                        self.max_regime + 1,
                        self.t,
                        rs.k,
                    )
                    self._cap_warned = True
                # Clear the accumulator so the cap is not re-triggered every
                # round; the step size stays at its final value.
                rs.inner.regime_cost_sum = np.zeros(self.cfg.d)
                return
            k = rs.k + 1
            self.regime_state = RegimeState(
                k=k,
                start_round=self.t + 1,
                gamma=self.cfg.gamma_k(k),
                threshold=regime_threshold(k, self.cfg),
                inner=PgdState(lam=np.zeros(self.cfg.d)),
            )


class MixedPolicyStrategy:
    """Lagrangian policy with a fixed dual vector and no dual updates.

    Plays argmax of reward_ucb(x, a) - <cost_lcb(x, a) - target, lambda_fixed>,
    where lambda_fixed is supplied (typically an oracle estimate of the optimal
    dual vector for the margined budgets).
    """

    def __init__(self, lambda_fixed: np.ndarray, target: np.ndarray, n_actions: int):
        self.lambda_fixed = np.asarray(lambda_fixed, dtype=float)
        if np.any(self.lambda_fixed < 0):
            raise ValueError("fixed dual vector must be nonnegative")
        self.target = np.asarray(target, dtype=float)
        self.n_actions = int(n_actions)

    @property
    def dual_vector(self) -> np.ndarray:
        return self.lambda_fixed

    @property
    def regime(self) -> int:
        return 0

    def choose(self, x: ContextVector, est: BaseEstimator, rng: np.random.Generator) -> int:
        ucb, lcb = action_bounds(x, est, self.n_actions)
        return select_action(ucb, lcb, self.target, self.lambda_fixed)

    def observe(self, x: ContextVector, a: int, r: float, c: np.ndarray, est: BaseEstimator) -> None:
        pass  # the dual vector is frozen by construction
