"""Contextual bandits with knapsacks (CBwK).

Sequential decision making under cumulative vector-cost budgets:
dual projected-gradient strategies (fixed and adaptive step sizes),
a primal LP strategy for finite context sets, optimistic confidence-bound
estimation, dual-minimization benchmark oracles, and a fairness-constrained
court-appearance simulation environment with a reproducible CLI harness.
"""

__version__ = "0.1.0"

from .core import (
    ContextVector,
    Environment,
    FiniteContextEnv,
    RoundRecord,
    Trajectory,
    clip,
    cost_excess_norm,
    regret,
    validate_budget,
)

__all__ = [
    "ContextVector",
    "Environment",
    "FiniteContextEnv",
    "RoundRecord",
    "Trajectory",
    "clip",
    "cost_excess_norm",
    "regret",
    "validate_budget",
    "__version__",
]
