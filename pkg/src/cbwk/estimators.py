"""Sequential confidence-bound estimation of rewards and costs.

Estimators produce, for every context-action pair, a point estimate, a width
``epsilon``, and the clipped optimistic bounds

    reward_ucb = clip[r_hat + eps] to [0, 1]
    cost_lcb   = clip[c_hat - eps * 1] to [-1, 1] componentwise.

Before any observation arrives, the bounds are maximally optimistic
(``ucb = 1``, ``lcb = -1``) so that unexplored actions look favorable.

Three implementations are provided: a ridge linear model with shared design
matrix across the reward and the d cost outputs, a penalized logistic
maximum-likelihood model for Bernoulli rewards (optionally paired with a known
cost function, in which case cost bounds are exact), and an oracle wrapper
around the true means with zero widths, used as a test double.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ContextVector, Environment, clip

# Width returned before the first observation; large enough that clipping
# yields ucb = 1 and lcb = -1 regardless of the initial point estimates.
INITIAL_OPTIMISM_EPS = 2.0

# Floor regularization applied for matrix inversion when the configured
# regularizer is 0, so early-round design matrices stay invertible.
INVERSION_FLOOR = 1e-8


@dataclass(frozen=True)
class FeatureMap:
    """A known feature transform phi(x, a) of constant output dimension."""

    dim: int
    evaluate: Callable[[ContextVector, int], np.ndarray]

    def __call__(self, x: ContextVector, a: int) -> np.ndarray:
        phi = np.asarray(self.evaluate(x, a), dtype=float)
        if phi.shape != (self.dim,) or not np.all(np.isfinite(phi)):
            raise ValueError("feature map output must be a finite vector of the declared dimension")
        return phi


def sigmoid(u):
    """Numerically stable 1 / (1 + exp(-u))."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return float(out) if out.ndim == 0 else out


def fit_logistic_mle(
    features: np.ndarray,
    labels: np.ndarray,
    reg: float = 0.0,
    init: np.ndarray | None = None,
    grad_tol: float = 1e-8,
    max_iter: int = 100,
) -> np.ndarray:
    """Maximize the reg-penalized Bernoulli log-likelihood by Newton-Raphson.

    The penalty is (reg / 2) * ||mu||^2. Newton steps use step halving; the
    solve stops at gradient norm <= grad_tol or after max_iter iterations.
    With reg = 0 and separable data the optimum is at infinity; that case is
    detected and refit with a floor ridge of 1e-8, with a warning.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("feature buffer must be a nonempty 2-d array")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must lie in {0, 1}")

    def neg_loglik(mu: np.ndarray) -> float:
        z = X @ mu
        return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * reg * mu @ mu)

    p = X.shape[1]
    mu = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    value = neg_loglik(mu)
    for _ in range(max_iter):
        z = X @ mu
        prob = sigmoid(z)
        grad = X.T @ (prob - y) + reg * mu
        if np.linalg.norm(grad) <= grad_tol:
            # With reg = 0, every label fit to within 1e-6 means the gradient
            # vanished through sigmoid saturation, not at a finite optimum
            # (scaling mu up would still increase the likelihood): that is
            # separation, handled below. A finite optimum keeps at least one
            # probability at a moderate distance from its label.
            if reg != 0.0 or np.max(np.abs(prob - y)) > 1e-6:
                return mu
            break
        w = prob * (1.0 - prob)
        hess = (X * w[:, None]).T @ X + reg * np.eye(p)
        try:
            direction = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.solve(hess + INVERSION_FLOOR * np.eye(p), -grad)
        step = 1.0
        for _ in range(30):
            trial = mu + step * direction
            trial_value = neg_loglik(trial)
            if trial_value <= value:
                mu, value = trial, trial_value
                break
            step *= 0.5
        else:
            break
        if not np.all(np.isfinite(mu)) or np.linalg.norm(mu) > 1e6:
            break

    if reg == 0.0:
        warnings.warn(
            "logistic MLE did not converge with reg=0 (likely separation); "
            "refitting with floor ridge 1e-8",
            RuntimeWarning,
        )
        return fit_logistic_mle(X, y, reg=INVERSION_FLOOR, init=None, grad_tol=grad_tol, max_iter=max_iter)
    return mu


class BaseEstimator:
    """Shared interface: update with observations, emit widths and bounds."""

    t: int = 0
    version: int = 0

    def update(self, x: ContextVector, a: int, r: float, c: np.ndarray) -> None:
        raise NotImplementedError

    def epsilon(self, x: ContextVector, a: int) -> float:
        raise NotImplementedError

    def predict_reward(self, x: ContextVector, a: int) -> float:
        raise NotImplementedError

    def predict_cost(self, x: ContextVector, a: int) -> np.ndarray:
        raise NotImplementedError

    def reward_ucb(self, x: ContextVector, a: int) -> float:
        return clip(self.predict_reward(x, a) + self.epsilon(x, a), 0.0, 1.0)

    def cost_lcb(self, x: ContextVector, a: int) -> np.ndarray:
        eps = self.cost_epsilon(x, a)
        return clip(self.predict_cost(x, a) - eps, -1.0, 1.0)

    def cost_epsilon(self, x: ContextVector, a: int) -> float:
        """Width applied on the cost side; equals epsilon unless costs are known."""
        return self.epsilon(x, a)

    @staticmethod
    def _check_observation(r: float, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if not np.isfinite(r) or not np.all(np.isfinite(c)):
            raise ValueError("observations must be finite")
        if not (0.0 <= r <= 1.0) or np.any(np.abs(c) > 1.0 + 1e-12):
            raise ValueError("reward must lie in [0, 1] and costs in [-1, 1]")
        return c


class LinearUcbEstimator(BaseEstimator):
    """Ridge regression heads (1 reward + d costs) over a shared design matrix.

    The design matrix ``V_t = sum phi phi^T + reg * I`` is shared across
    outputs; its inverse is maintained by rank-one Sherman-Morrison updates and
    recomputed from scratch every ``recompute_every`` updates to contain
    numerical drift. The width is ``eps = c_delta * sqrt(phi^T V^-1 phi)``
    (the confidence-radius log factor is folded into ``c_delta``).
    """

    def __init__(
        self,
        feature_map: FeatureMap,
        cost_dim: int,
        c_delta: float,
        reg: float = 1.0,
        recompute_every: int = 1000,
    ):
        if c_delta <= 0:
            raise ValueError("c_delta must be positive")
        self.feature_map = feature_map
        self.cost_dim = cost_dim
        self.c_delta = float(c_delta)
        self.reg = float(reg)
        self.recompute_every = int(recompute_every)
        p = feature_map.dim
        effective = max(self.reg, INVERSION_FLOOR)
        self._V = effective * np.eye(p)
        self._Vinv = (1.0 / effective) * np.eye(p)
        # Per-output moment vectors sum phi * target, one column per output.
        self._moments = np.zeros((p, 1 + cost_dim))
        self.t = 0

    def update(self, x: ContextVector, a: int, r: float, c: np.ndarray) -> None:
        c = self._check_observation(r, c)
        phi = self.feature_map(x, a)
        self._V += np.outer(phi, phi)
        Vphi = self._Vinv @ phi
        self._Vinv -= np.outer(Vphi, Vphi) / (1.0 + phi @ Vphi)
        self._moments += np.outer(phi, np.concatenate(([r], c)))
        self.t += 1
        self.version += 1
        if self.t % self.recompute_every == 0:
            self._Vinv = np.linalg.inv(self._V)

    def design_inverse_drift(self) -> float:
        """Relative Frobenius error of the maintained inverse (diagnostic)."""
        fresh = np.linalg.inv(self._V)
        return float(np.linalg.norm(self._Vinv - fresh) / np.linalg.norm(fresh))

    def _theta(self) -> np.ndarray:
        return self._Vinv @ self._moments

    def epsilon(self, x: ContextVector, a: int) -> float:
        if self.t == 0:
            return INITIAL_OPTIMISM_EPS
        phi = self.feature_map(x, a)
        return self.c_delta * math.sqrt(max(phi @ self._Vinv @ phi, 0.0))

    def predict_reward(self, x: ContextVector, a: int) -> float:
        if self.t == 0:
            return 0.5
        return float(self.feature_map(x, a) @ self._theta()[:, 0])

    def predict_cost(self, x: ContextVector, a: int) -> np.ndarray:
        if self.t == 0:
            return np.zeros(self.cost_dim)
        return self.feature_map(x, a) @ self._theta()[:, 1:]


class LogisticUcbEstimator(BaseEstimator):
    """Penalized logistic MLE for Bernoulli rewards with a UCB width.

    The width follows ``eps_t = c_delta * (1 + ln t) * sqrt(phi^T V_t^-1 phi)``
    with ``V_t = sum phi phi^T + reg * I`` (floor 1e-8 for inversion when
    reg = 0). The design matrix and widths refresh every round; the MLE is
    refit every round while ``t <= refit_dense_until`` and every
    ``refit_every`` rounds afterwards, reusing the stale fit in between.

    When the cost function is known (``known_cost`` given), cost bounds are
    exact: ``cost_lcb(x, a) = c(x, a)`` with zero cost-side width.
    """

    def __init__(
        self,
        feature_map: FeatureMap,
        cost_dim: int,
        c_delta: float = 0.025,
        reg: float = 0.0,
        known_cost: Callable[[ContextVector, int], np.ndarray] | None = None,
        refit_dense_until: int = 500,
        refit_every: int = 10,
    ):
        if c_delta <= 0:
            raise ValueError("c_delta must be positive")
        self.feature_map = feature_map
        self.cost_dim = cost_dim
        self.c_delta = float(c_delta)
        self.reg = float(reg)
        self.known_cost = known_cost
        self.refit_dense_until = int(refit_dense_until)
        self.refit_every = int(refit_every)
        p = feature_map.dim
        effective = max(self.reg, INVERSION_FLOOR)
        self._V = effective * np.eye(p)
        self._Vinv = (1.0 / effective) * np.eye(p)
        self._mu = np.zeros(p)
        self._capacity = 1024
        self._features = np.zeros((self._capacity, p))
        self._labels = np.zeros(self._capacity)
        self.t = 0

    def update(self, x: ContextVector, a: int, r: float, c: np.ndarray) -> None:
        self._check_observation(r, c)
        if r not in (0.0, 1.0):
            raise ValueError("logistic estimator expects Bernoulli rewards in {0, 1}")
        phi = self.feature_map(x, a)
        if self.t == self._capacity:
            self._capacity *= 2
            self._features = np.vstack([self._features, np.zeros_like(self._features)])
            self._labels = np.concatenate([self._labels, np.zeros_like(self._labels)])
        self._features[self.t] = phi
        self._labels[self.t] = r
        self._V += np.outer(phi, phi)
        Vphi = self._Vinv @ phi
        self._Vinv -= np.outer(Vphi, Vphi) / (1.0 + phi @ Vphi)
        self.t += 1
        self.version += 1
        if self.t <= self.refit_dense_until or self.t % self.refit_every == 0:
            self.refit()

    def refit(self) -> None:
        with warnings.catch_warnings():
            # Early buffers are often separable with reg = 0; the floor-ridge
            # fallback inside fit_logistic_mle is the intended behavior here.
            warnings.simplefilter("ignore", RuntimeWarning)
            self._mu = fit_logistic_mle(
                self._features[: self.t],
                self._labels[: self.t],
                reg=self.reg,
                init=self._mu,
            )

    @property
    def mu(self) -> np.ndarray:
        return self._mu.copy()

    def epsilon(self, x: ContextVector, a: int) -> float:
        if self.t == 0:
            return INITIAL_OPTIMISM_EPS
        phi = self.feature_map(x, a)
        log_factor = 1.0 + math.log(max(self.t, 1))
        return self.c_delta * log_factor * math.sqrt(max(phi @ self._Vinv @ phi, 0.0))

    def predict_reward(self, x: ContextVector, a: int) -> float:
        if self.t == 0:
            return 0.5
        return float(sigmoid(self.feature_map(x, a) @ self._mu))

    def predict_cost(self, x: ContextVector, a: int) -> np.ndarray:
        if self.known_cost is None:
            raise NotImplementedError("no cost model: construct with known_cost to use cost bounds")
        return np.asarray(self.known_cost(x, a), dtype=float)

    def cost_epsilon(self, x: ContextVector, a: int) -> float:
        if self.known_cost is None:
            raise NotImplementedError("no cost model: construct with known_cost to use cost bounds")
        return 0.0


class OracleEstimator(BaseEstimator):
    """Exact knowledge of the true means; widths identically zero."""

    def __init__(self, env: Environment):
        self.env = env
        self.t = 0

    def update(self, x: ContextVector, a: int, r: float, c: np.ndarray) -> None:
        self.t += 1  # observations are ignored; the oracle already knows r and c

    def epsilon(self, x: ContextVector, a: int) -> float:
        return 0.0

    def predict_reward(self, x: ContextVector, a: int) -> float:
        return self.env.expected_reward(x, a)

    def predict_cost(self, x: ContextVector, a: int) -> np.ndarray:
        return self.env.expected_cost(x, a)


class BetaAccumulator:
    """Running sum of the widths of played pairs: beta_t = sum eps_(tau-1)(x_tau, a_tau)."""

    def __init__(self) -> None:
        self._value = 0.0

    def add(self, eps: float) -> None:
        if eps < 0:
            raise ValueError("widths are nonnegative")
        self._value += eps

    @property
    def value(self) -> float:
        return self._value


def theoretical_beta_bound(T: int, delta: float, c_beta: float = 1.0) -> float:
    """Closed-form stand-in for the realized beta: c_beta * sqrt(T) * ln(4T / delta)."""
    if T < 1 or not (0.0 < delta < 1.0):
        raise ValueError("require T >= 1 and delta in (0, 1)")
    return c_beta * math.sqrt(T) * math.log(4.0 * T / delta)
