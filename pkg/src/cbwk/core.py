"""Problem-setting types shared by every strategy.

A problem instance runs for ``T`` rounds. Each round the environment draws a
context ``x_t``, the learner picks an action ``a_t`` from a finite set, and the
environment returns a reward ``r_t`` in [0, 1] together with a signed cost
vector ``c_t`` in [-1, 1]^d. The learner maximizes the cumulative reward while
keeping the cumulative cost below ``T * B`` componentwise, where ``B`` is the
vector of average cost constraints.

RNG contract: every simulation run owns a single 64-bit-seeded
``numpy.random.Generator``. Within a round the generator is consumed in the
order (context draw, action randomization if the strategy randomizes, reward
draw, cost draw); deterministic quantities consume nothing. Identical seeds
therefore give bit-identical trajectories.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class ContextVector:
    """A sampled context: real coordinates plus an optional group index."""

    coords: np.ndarray
    group: int | None = None

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=float)
        if not np.all(np.isfinite(coords)):
            raise ValueError("context coordinates must be finite")
        if self.group is not None and self.group < 0:
            raise ValueError("group index must be nonnegative")
        object.__setattr__(self, "coords", coords)

    def key(self) -> tuple[bytes, int | None]:
        """Hashable identity used to index finite context supports."""
        return (self.coords.tobytes(), self.group)


def validate_budget(b: np.ndarray) -> np.ndarray:
    """Validate an average-cost constraint vector B in [0, 1]^d, d >= 1."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.ndim != 1 or b.size < 1:
        raise ValueError("budget must be a vector with d >= 1")
    if np.any(b < 0.0) or np.any(b > 1.0):
        raise ValueError("budget components must lie in [0, 1]")
    return b


def validate_policy(probs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate a distribution over actions (componentwise >= 0, sums to 1)."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < -tol) or abs(probs.sum() - 1.0) > tol:
        raise ValueError("policy must be a probability distribution over actions")
    return np.clip(probs, 0.0, None)


class Environment(ABC):
    """Behavior contract for simulation environments.

    Sampled rewards must have conditional mean ``expected_reward(x, a)`` and
    sampled costs conditional mean ``expected_cost(x, a)`` componentwise.
    """

    @property
    @abstractmethod
    def n_actions(self) -> int: ...

    @property
    @abstractmethod
    def cost_dim(self) -> int: ...

    @abstractmethod
    def sample_context(self, rng: np.random.Generator) -> ContextVector: ...

    @abstractmethod
    def expected_reward(self, x: ContextVector, a: int) -> float: ...

    @abstractmethod
    def expected_cost(self, x: ContextVector, a: int) -> np.ndarray: ...

    def sample_reward(self, x: ContextVector, a: int, rng: np.random.Generator) -> float:
        """Default reward draw: Bernoulli with mean expected_reward(x, a)."""
        return float(rng.random() < self.expected_reward(x, a))

    def sample_cost(self, x: ContextVector, a: int, rng: np.random.Generator) -> np.ndarray:
        """Default cost draw: deterministic, equal to the expectation."""
        return self.expected_cost(x, a)


class FiniteContextEnv(Environment):
    """Environment over an explicit finite context distribution.

    Rewards are Bernoulli with the tabulated means (or deterministic when
    ``reward_noise="none"``). Cost draws support three modes:

    - ``"none"``: realized cost equals the mean (deterministic);
    - ``"bernoulli"``: each component drawn from {0, 1} with the mean as
      success probability (requires means in [0, 1]; a zero-mean component is
      deterministically 0, so a null-cost action stays exactly null);
    - ``"signed"``: each component drawn from {-1, +1} with mean preserved.
    """

    def __init__(
        self,
        contexts: list[ContextVector],
        weights: np.ndarray,
        rewards: np.ndarray,
        costs: np.ndarray,
        budgets: np.ndarray,
        cost_noise: str = "none",
        reward_noise: str = "bernoulli",
        null_action: int | None = None,
    ):
        self.contexts = list(contexts)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (len(self.contexts),):
            raise ValueError("one weight per context required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("context weights must form a distribution")
        self.rewards = np.asarray(rewards, dtype=float)
        self.costs = np.asarray(costs, dtype=float)
        n_x = len(self.contexts)
        if self.rewards.ndim != 2 or self.rewards.shape[0] != n_x:
            raise ValueError("rewards must be a |X| x |A| table")
        if self.costs.shape[:2] != self.rewards.shape or self.costs.ndim != 3:
            raise ValueError("costs must be a |X| x |A| x d table")
        if np.any(self.rewards < 0) or np.any(self.rewards > 1):
            raise ValueError("reward means must lie in [0, 1]")
        if np.any(np.abs(self.costs) > 1):
            raise ValueError("cost means must lie in [-1, 1]")
        self.budgets = validate_budget(budgets)
        if self.budgets.size != self.costs.shape[2]:
            raise ValueError("budget dimension must match cost dimension")
        if cost_noise not in ("none", "bernoulli", "signed"):
            raise ValueError(f"unknown cost_noise mode {cost_noise!r}")
        if cost_noise == "bernoulli" and np.any(self.costs < 0):
            raise ValueError("bernoulli cost noise requires means in [0, 1]")
        if reward_noise not in ("none", "bernoulli"):
            raise ValueError(f"unknown reward_noise mode {reward_noise!r}")
        self.cost_noise = cost_noise
        self.reward_noise = reward_noise
        self.null_action = null_action
        if null_action is not None and np.any(self.costs[:, null_action, :] != 0.0):
            raise ValueError("declared null action must have zero expected cost")
        self._index = {x.key(): i for i, x in enumerate(self.contexts)}

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def cost_dim(self) -> int:
        return self.costs.shape[2]

    def context_index(self, x: ContextVector) -> int:
        return self._index[x.key()]

    def sample_context(self, rng: np.random.Generator) -> ContextVector:
        i = int(rng.choice(len(self.contexts), p=self.weights))
        return self.contexts[i]

    def expected_reward(self, x: ContextVector, a: int) -> float:
        return float(self.rewards[self.context_index(x), a])

    def expected_cost(self, x: ContextVector, a: int) -> np.ndarray:
        return self.costs[self.context_index(x), a].copy()

    def sample_reward(self, x: ContextVector, a: int, rng: np.random.Generator) -> float:
        mean = self.expected_reward(x, a)
        if self.reward_noise == "none":
            return mean
        return float(rng.random() < mean)

    def sample_cost(self, x: ContextVector, a: int, rng: np.random.Generator) -> np.ndarray:
        mean = self.expected_cost(x, a)
        if self.cost_noise == "none":
            return mean
        if self.cost_noise == "bernoulli":
            return (rng.random(mean.size) < mean).astype(float)
        # signed: {-1, +1} with P(+1) = (1 + mean) / 2 preserves the mean
        return np.where(rng.random(mean.size) < (1.0 + mean) / 2.0, 1.0, -1.0)


@dataclass
class RoundRecord:
    """One logged round. ``lambda_before`` is retained for audit and plotting."""

    t: int
    x: ContextVector
    a: int
    r: float
    c: np.ndarray
    lambda_before: np.ndarray
    regime: int = 0


@dataclass
class Trajectory:
    """Ordered per-round records with maintained cumulative sums."""

    cost_dim: int
    records: list[RoundRecord] = field(default_factory=list)
    cum_reward: float = 0.0
    cum_cost: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.cum_cost is None:
            self.cum_cost = np.zeros(self.cost_dim)

    def append(self, record: RoundRecord) -> None:
        if not (0.0 <= record.r <= 1.0):
            raise ValueError("realized reward out of [0, 1]")
        if np.any(np.abs(record.c) > 1.0 + 1e-12):
            raise ValueError("realized cost out of [-1, 1]")
        self.records.append(record)
        self.cum_reward += record.r
        self.cum_cost = self.cum_cost + record.c

    def __len__(self) -> int:
        return len(self.records)

    def reward_array(self) -> np.ndarray:
        return np.array([rec.r for rec in self.records])

    def cost_matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.cost_dim))
        return np.stack([rec.c for rec in self.records])


def clip(x, lo, hi):
    """Componentwise min(max(x, lo), hi); raises if the bounds are inverted."""
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError("clip bounds inverted: lo > hi")
    clipped = np.clip(x, lo, hi)
    return float(clipped) if np.isscalar(x) or np.ndim(x) == 0 else clipped


def regret(traj: Trajectory, opt_per_round: float) -> float:
    """T * opt_per_round minus the cumulative realized reward."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    return len(traj) * opt_per_round - traj.cum_reward


def cost_excess_norm(traj: Trajectory, target: np.ndarray, upto: int | None = None) -> float:
    """Euclidean norm of the positive part of (sum of costs - upto * target)."""
    upto = len(traj) if upto is None else upto
    if upto > len(traj):
        raise ValueError("upto exceeds trajectory length")
    total = np.zeros(traj.cost_dim)
    for rec in traj.records[:upto]:
        total = total + rec.c
    excess = np.clip(total - upto * np.asarray(target, dtype=float), 0.0, None)
    return float(np.linalg.norm(excess))
