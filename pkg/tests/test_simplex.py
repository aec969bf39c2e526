"""Tests for the dense two-phase simplex solver.

Random programs are cross-checked against an independent oracle that
enumerates all basic solutions (vertices) of the standard-form polytope, which
is exhaustive at these sizes.
"""

import itertools

import numpy as np
import pytest

from cbwk.simplex import LpResult, linprog_simplex


def enumerate_optimum(c, A, b, maximize):
    """Brute-force LP oracle: best objective over all basic feasible points.

    A is the standard-form constraint matrix (equalities Ax = b, x >= 0)
    already including slack columns.
    """
    m, n = A.shape
    best = None
    for cols in itertools.combinations(range(n), m):
        sub = A[:, cols]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        x_basic = np.linalg.solve(sub, b)
        if np.any(x_basic < -1e-9):
            continue
        x = np.zeros(n)
        x[list(cols)] = x_basic
        value = float(c @ x[: c.size])
        if best is None or (value > best if maximize else value < best):
            best = value
    return best


class TestKnownPrograms:
    def test_two_variable_maximum(self):
        # max x0 + 2 x1 s.t. x0 + x1 <= 4, x1 <= 3 -> x = (1, 3), value 7
        res = linprog_simplex(
            np.array([1.0, 2.0]),
            A_ub=np.array([[1.0, 1.0], [0.0, 1.0]]),
            b_ub=np.array([4.0, 3.0]),
            maximize=True,
        )
        assert res.ok
        assert res.value == pytest.approx(7.0)
        assert res.x == pytest.approx([1.0, 3.0])

    def test_equality_only_program(self):
        # min x0 + x1 s.t. x0 + 2 x1 = 2 -> x = (0, 1)
        res = linprog_simplex(
            np.array([1.0, 1.0]),
            A_eq=np.array([[1.0, 2.0]]),
            b_eq=np.array([2.0]),
        )
        assert res.ok
        assert res.value == pytest.approx(1.0)

    def test_infeasible_detected(self):
        res = linprog_simplex(
            np.array([1.0]),
            A_ub=np.array([[1.0]]),
            b_ub=np.array([1.0]),
            A_eq=np.array([[1.0]]),
            b_eq=np.array([3.0]),
        )
        assert res.status == "infeasible"
        assert res.x is None and res.value is None

    def test_unbounded_detected(self):
        res = linprog_simplex(
            np.array([1.0, 0.0]),
            A_ub=np.array([[-1.0, 0.0]]),
            b_ub=np.array([0.0]),
            maximize=True,
        )
        assert res.status == "unbounded"

    def test_negative_rhs_normalized(self):
        # x0 >= 1 written as -x0 <= -1; min x0 -> 1
        res = linprog_simplex(
            np.array([1.0]),
            A_ub=np.array([[-1.0]]),
            b_ub=np.array([-1.0]),
        )
        assert res.ok
        assert res.value == pytest.approx(1.0)

    def test_redundant_equalities_handled(self):
        res = linprog_simplex(
            np.array([1.0, 1.0]),
            A_eq=np.array([[1.0, 1.0], [2.0, 2.0]]),
            b_eq=np.array([1.0, 2.0]),
            maximize=True,
        )
        assert res.ok
        assert res.value == pytest.approx(1.0)

    def test_degenerate_vertex(self):
        # three constraints meet at (1, 0); Dantzig pivoting must not cycle
        res = linprog_simplex(
            np.array([1.0, 1.0]),
            A_ub=np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]),
            b_ub=np.array([1.0, 1.0, 1.0]),
            maximize=True,
        )
        assert res.ok
        assert res.value == pytest.approx(1.0)

    def test_requires_some_constraint(self):
        with pytest.raises(ValueError):
            linprog_simplex(np.array([1.0]))

    def test_result_ok_property(self):
        assert LpResult(status="optimal", x=np.zeros(1), value=0.0).ok
        assert not LpResult(status="stalled", x=None, value=None).ok


class TestAgainstEnumeration:
    @pytest.mark.parametrize("seed", range(30))
    def test_random_inequality_programs(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        c = rng.uniform(-1, 1, n)
        A_ub = rng.uniform(-1, 1, (m, n))
        # keep the feasible region nonempty (origin) and bounded via x <= cap
        b_ub = rng.uniform(0.5, 2.0, m)
        A_full = np.vstack([A_ub, np.eye(n)])
        b_full = np.concatenate([b_ub, np.full(n, 3.0)])
        maximize = bool(rng.integers(2))
        res = linprog_simplex(c, A_ub=A_full, b_ub=b_full, maximize=maximize)
        assert res.ok
        standard = np.hstack([A_full, np.eye(m + n)])
        expected = enumerate_optimum(c, standard, b_full, maximize)
        assert res.value == pytest.approx(expected, abs=1e-8)
        # the returned point is feasible and achieves the reported value
        assert np.all(A_full @ res.x <= b_full + 1e-8)
        assert float(c @ res.x) == pytest.approx(res.value, abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_mixed_programs(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = 3
        c = rng.uniform(-1, 1, n)
        A_eq = rng.uniform(0.2, 1.0, (1, n))
        b_eq = np.array([1.0])
        A_ub = np.eye(n)
        b_ub = np.full(n, 0.9)
        res = linprog_simplex(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, maximize=True)
        if not res.ok:
            assert res.status == "infeasible"
            return
        standard = np.zeros((1 + n, n + n))
        standard[0, :n] = A_eq
        standard[1:, :n] = A_ub
        standard[1:, n:] = np.eye(n)
        expected = enumerate_optimum(c, standard, np.concatenate([b_eq, b_ub]), True)
        assert res.value == pytest.approx(expected, abs=1e-8)
        assert A_eq @ res.x == pytest.approx([1.0], abs=1e-8)
