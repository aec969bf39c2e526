"""Fairness cost construction and the court-appearance simulation environment.

The generic construction turns a scalar spend cost into a vector that, besides
the spend itself, penalizes the gap between each group's average spend share
and its population proportion, in both directions. With groups G and
proportions gamma_g the expected-cost vector has 1 + 2|G| components

    c(x, a) = ( c_spd,  ( c_spd 1{gr(x)=g} - gamma_g c_spd,
                          gamma_g c_spd - c_spd 1{gr(x)=g} )_{g in G} )

and the matching budget vector is B = (B_total, (gamma_g tau, gamma_g tau)_g),
with tolerance tau bounding the per-group average disparity.

The court environment models offering court-appearance assistance. Contexts
carry age, proximity and poverty scores (i.i.d. uniform on [0, 1]) and a group
index in {0, 1} (fair coin). Actions are {control, voucher, rideshare}.
Appearance is Bernoulli with a logistic model over the feature map

    phi(x, a) = [ x_age,
                  x_prox 1{a=voucher},  x_prox 1{a=voucher} 1{gr=0},
                  x_pov 1{a=ride},      x_pov 1{a=ride} 1{gr=0} ]

at true parameter mu* = (-1, 1, 1, 2, 2): assistance raises the appearance
probability, more strongly for group 0. Costs are deterministic and fully
known: two spend components (rideshare then voucher) plus eight fairness
components, a first series of four terms 2 * 1{a}1{gr=g} - 1{a} over
(ride, voucher) x (g=0, 1) and a second series with the opposite values.
These are twice the generic construction at gamma = (1/2, 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContextVector, Environment, validate_budget
from .estimators import FeatureMap

CONTROL, VOUCHER, RIDE = 0, 1, 2
COURT_ACTIONS = (CONTROL, VOUCHER, RIDE)
MU_STAR = np.array([-1.0, 1.0, 1.0, 2.0, 2.0])

RIDE_BUDGET = 0.05
VOUCHER_BUDGET = 0.20

# Cost-vector layout: spend components first, then the first fairness series
# over (ride, voucher) x (group 0, group 1), then its negation.
SPEND_COMPONENTS = (0, 1)
FIRST_FAIRNESS_SERIES = slice(2, 6)
COURT_COST_DIM = 10


@dataclass(frozen=True)
class GroupSpec:
    """Population proportions of the groups; each in (0, 1], summing to 1."""

    proportions: tuple[float, ...]

    def __post_init__(self) -> None:
        props = tuple(float(g) for g in self.proportions)
        if not props or any(not (0.0 < g <= 1.0) for g in props):
            raise ValueError("group proportions must lie in (0, 1]")
        if abs(sum(props) - 1.0) > 1e-9:
            raise ValueError("group proportions must sum to 1")
        object.__setattr__(self, "proportions", props)

    @property
    def n_groups(self) -> int:
        return len(self.proportions)


def build_fairness_cost(c_spd: float, group: int, spec: GroupSpec) -> np.ndarray:
    """Expected-cost vector (c_spd, (c_spd 1{gr=g} - gamma_g c_spd, ...)_g)."""
    if not 0 <= group < spec.n_groups:
        raise ValueError("group index out of range")
    worst = max(max(g, 1.0 - g) for g in spec.proportions)
    if abs(c_spd) > 1.0 or abs(c_spd) * worst > 1.0 + 1e-12:
        raise ValueError("spend cost too large: fairness components would leave [-1, 1]")
    out = [float(c_spd)]
    for g, gamma_g in enumerate(spec.proportions):
        signed = c_spd * ((1.0 if group == g else 0.0) - gamma_g)
        out.extend([signed, -signed])
    return np.array(out)


def build_fairness_budget(b_total: float, tau: float, spec: GroupSpec) -> np.ndarray:
    """Budget vector (B_total, (gamma_g tau, gamma_g tau)_g) of dimension 1 + 2|G|."""
    if not (0.0 <= b_total <= 1.0 and 0.0 <= tau <= 1.0):
        raise ValueError("B_total and tau must lie in [0, 1]")
    out = [float(b_total)]
    for gamma_g in spec.proportions:
        out.extend([gamma_g * tau, gamma_g * tau])
    return validate_budget(np.array(out))


def court_feature_vector(x: ContextVector, a: int) -> np.ndarray:
    """phi(x, a) in R^5 for the court logistic appearance model."""
    age, prox, pov = x.coords
    voucher = 1.0 if a == VOUCHER else 0.0
    ride = 1.0 if a == RIDE else 0.0
    g0 = 1.0 if x.group == 0 else 0.0
    return np.array([age, prox * voucher, prox * voucher * g0, pov * ride, pov * ride * g0])


def court_cost(x: ContextVector, a: int) -> np.ndarray:
    """Deterministic 10-component court cost vector for context x and action a."""
    ride = 1.0 if a == RIDE else 0.0
    voucher = 1.0 if a == VOUCHER else 0.0
    g0 = 1.0 if x.group == 0 else 0.0
    g1 = 1.0 - g0
    first_series = [
        2.0 * ride * g0 - ride,
        2.0 * ride * g1 - ride,
        2.0 * voucher * g0 - voucher,
        2.0 * voucher * g1 - voucher,
    ]
    return np.array([ride, voucher, *first_series, *[-f for f in first_series]])


def court_budgets(tau: float) -> np.ndarray:
    """B = (0.05, 0.20, tau x 8): spend budgets then one tau per fairness component."""
    return validate_budget(np.array([RIDE_BUDGET, VOUCHER_BUDGET] + [tau] * 8))


class CourtEnv(Environment):
    """Court-appearance environment: logistic Bernoulli rewards, known costs.

    ``link="sigmoid"`` (default) applies the standard sigmoid to phi^T mu*;
    ``link="complement"`` applies u -> 1/(1+e^u) instead, flipping every
    coefficient's effect (kept available for sensitivity analysis).
    """

    def __init__(self, tau: float, link: str = "sigmoid", mu_star: np.ndarray | None = None):
        if link not in ("sigmoid", "complement"):
            raise ValueError(f"unknown link {link!r}")
        self.tau = float(tau)
        self.link = link
        self.mu_star = MU_STAR.copy() if mu_star is None else np.asarray(mu_star, dtype=float)
        self.budgets = court_budgets(self.tau)

    @property
    def n_actions(self) -> int:
        return len(COURT_ACTIONS)

    @property
    def cost_dim(self) -> int:
        return COURT_COST_DIM

    def feature_map(self) -> FeatureMap:
        return FeatureMap(dim=5, evaluate=court_feature_vector)

    def sample_context(self, rng: np.random.Generator) -> ContextVector:
        coords = rng.random(3)  # age, proximity, poverty
        group = int(rng.integers(2))
        return ContextVector(coords=coords, group=group)

    def _link(self, u):
        z = np.asarray(u, dtype=float)
        out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        if self.link == "complement":
            out = 1.0 - out
        return float(out) if out.ndim == 0 else out

    def expected_reward(self, x: ContextVector, a: int) -> float:
        return self._link(court_feature_vector(x, a) @ self.mu_star)

    def expected_cost(self, x: ContextVector, a: int) -> np.ndarray:
        return court_cost(x, a)

    def batch_expected_tables(self, coords: np.ndarray, groups: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (rewards, costs) tables for S contexts over all actions."""
        S = coords.shape[0]
        age, prox, pov = coords[:, 0], coords[:, 1], coords[:, 2]
        g0 = (groups == 0).astype(float)
        zeros = np.zeros(S)
        phis = np.stack(
            [
                np.stack([age, zeros, zeros, zeros, zeros], axis=1),
                np.stack([age, prox, prox * g0, zeros, zeros], axis=1),
                np.stack([age, zeros, zeros, pov, pov * g0], axis=1),
            ],
            axis=1,
        )  # S x |A| x 5 in action order control, voucher, ride
        rewards = self._link(phis @ self.mu_star)
        costs = np.zeros((S, self.n_actions, self.cost_dim))
        for a in COURT_ACTIONS:
            for g in (0, 1):
                mask = groups == g
                if np.any(mask):
                    row = court_cost(ContextVector(coords=np.zeros(3), group=g), a)
                    costs[mask, a, :] = row
        return rewards, costs

    def sample_batch(self, S: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw S contexts; returns (coords S x 3, groups S)."""
        coords = rng.random((S, 3))
        groups = rng.integers(2, size=S)
        return coords, groups


def spend_margin_vector(b: float, d: int = COURT_COST_DIM) -> np.ndarray:
    """Margin subtracted from the spend budgets only: (b, b, 0, ..., 0)."""
    m = np.zeros(d)
    m[list(SPEND_COMPONENTS)] = b
    return m


def uniform_margin_vector(b: float, d: int) -> np.ndarray:
    """Margin b subtracted from every budget component."""
    return np.full(d, float(b))


def fairness_running_metric(cost_rows: np.ndarray) -> np.ndarray:
    """Per-round fairness metric from a T x 10 realized-cost matrix.

    At round t: the mean over the four first-series components of the absolute
    running average (1/t) sum_{tau<=t} c_{tau,i}.
    """
    if cost_rows.ndim != 2 or cost_rows.shape[1] != COURT_COST_DIM:
        raise ValueError("expected a T x 10 court cost matrix")
    t = np.arange(1, cost_rows.shape[0] + 1)[:, None]
    running = np.cumsum(cost_rows[:, FIRST_FAIRNESS_SERIES], axis=0) / t
    return np.abs(running).mean(axis=1)
