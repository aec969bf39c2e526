"""Dense two-phase simplex solver for small linear programs.

Solves

    min / max  c^T x
    subject to A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0

on dense numpy arrays. Intended for desk-scale problems (a few hundred
variables); no sparsity, no presolve. Pivoting uses Dantzig's rule and falls
back to Bland's rule after a fixed iteration budget so cycling cannot stall
the solve. Phase one minimizes the sum of artificial variables; a positive
phase-one optimum signals infeasibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-8


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "stalled"
    x: np.ndarray | None
    value: float | None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _iterate(tableau: np.ndarray, basis: list[int], n_cols: int, bland_after: int, max_iter: int) -> str:
    """Run simplex pivots in place until optimal, unbounded, or stalled."""
    for it in range(max_iter):
        costs = tableau[-1, :n_cols]
        if it < bland_after:
            col = int(np.argmin(costs))
            if costs[col] >= -PIVOT_TOL:
                return "optimal"
        else:
            below = np.flatnonzero(costs < -PIVOT_TOL)
            if below.size == 0:
                return "optimal"
            col = int(below[0])  # Bland's rule: lowest eligible index
        column = tableau[:-1, col]
        positive = column > PIVOT_TOL
        if not np.any(positive):
            return "unbounded"
        ratios = np.full(column.shape, np.inf)
        ratios[positive] = tableau[:-1, -1][positive] / column[positive]
        best = ratios.min()
        # Tie-break toward the smallest basis index, which is what makes
        # Bland's rule cycle-free.
        candidates = np.flatnonzero(ratios <= best + PIVOT_TOL)
        row = int(min(candidates, key=lambda r: basis[r]))
        pivot = tableau[row, col]
        tableau[row] /= pivot
        factors = tableau[:, col].copy()
        factors[row] = 0.0
        tableau -= np.outer(factors, tableau[row])
        basis[row] = col
    return "stalled"


def linprog_simplex(
    c: np.ndarray,
    A_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    maximize: bool = False,
    bland_after: int = 5000,
    max_iter: int = 20000,
) -> LpResult:
    """Two-phase simplex over nonnegative variables."""
    c = np.asarray(c, dtype=float)
    n = c.size
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    n_slack = 0 if A_ub is None else np.asarray(A_ub).shape[0]
    if A_ub is not None:
        A_ub = np.asarray(A_ub, dtype=float)
        b_ub = np.asarray(b_ub, dtype=float)
        for i in range(A_ub.shape[0]):
            slack = np.zeros(n_slack)
            slack[i] = 1.0
            rows.append(np.concatenate([A_ub[i], slack]))
            rhs.append(float(b_ub[i]))
    if A_eq is not None:
        A_eq = np.asarray(A_eq, dtype=float)
        b_eq = np.asarray(b_eq, dtype=float)
        for i in range(A_eq.shape[0]):
            rows.append(np.concatenate([A_eq[i], np.zeros(n_slack)]))
            rhs.append(float(b_eq[i]))
    if not rows:
        raise ValueError("at least one constraint row is required")

    A = np.vstack(rows)
    b = np.asarray(rhs, dtype=float)
    negative = b < 0
    A[negative] *= -1.0
    b[negative] *= -1.0
    m, total = A.shape

    # Phase one: artificial basis, minimize the artificial sum.
    tableau = np.zeros((m + 1, total + m + 1))
    tableau[:m, :total] = A
    tableau[:m, total : total + m] = np.eye(m)
    tableau[:m, -1] = b
    tableau[-1, :total] = -A.sum(axis=0)
    tableau[-1, -1] = -b.sum()
    basis = list(range(total, total + m))

    status = _iterate(tableau, basis, total + m, bland_after, max_iter)
    if status != "optimal":
        return LpResult(status="stalled", x=None, value=None)
    if -tableau[-1, -1] > FEAS_TOL:
        return LpResult(status="infeasible", x=None, value=None)

    # Drive any artificial variable still in the basis out of it (or drop the
    # row when its constraint is redundant).
    keep_rows = []
    for r in range(m):
        if basis[r] >= total:
            entering = np.flatnonzero(np.abs(tableau[r, :total]) > PIVOT_TOL)
            if entering.size == 0:
                continue  # redundant constraint
            col = int(entering[0])
            pivot = tableau[r, col]
            tableau[r] /= pivot
            factors = tableau[:, col].copy()
            factors[r] = 0.0
            tableau -= np.outer(factors, tableau[r])
            basis[r] = col
        keep_rows.append(r)
    if len(keep_rows) < m:
        tableau = np.vstack([tableau[keep_rows], tableau[-1:]])
        basis = [basis[r] for r in keep_rows]
        m = len(keep_rows)

    # Phase two: real objective over the original + slack columns.
    objective = (-c if maximize else c).astype(float)
    phase2 = np.zeros((m + 1, total + 1))
    phase2[:m, :total] = tableau[:m, :total]
    phase2[:m, -1] = tableau[:m, -1]
    phase2[-1, :n] = objective
    for r in range(m):
        j = basis[r]
        coeff = phase2[-1, j]
        if coeff != 0.0:
            phase2[-1] -= coeff * phase2[r]

    status = _iterate(phase2, basis, total, bland_after, max_iter)
    if status != "optimal":
        return LpResult(status=status, x=None, value=None)

    x = np.zeros(total)
    for r in range(m):
        x[basis[r]] = phase2[r, -1]
    solution = np.clip(x[:n], 0.0, None)
    raw_value = float(objective @ x[:n])
    return LpResult(status="optimal", x=solution, value=-raw_value if maximize else raw_value)
