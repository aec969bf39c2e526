"""Tests for the finite-context primal LP strategy and its slack schedules."""

import math

import numpy as np
import pytest

from cbwk.core import ContextVector, FiniteContextEnv
from cbwk.estimators import BetaAccumulator, OracleEstimator, theoretical_beta_bound
from cbwk.primal_strategy import (
    XI_CONSTANT,
    EmpiricalContextDistribution,
    PrimalStrategy,
    SlackSchedule,
    alpha_anytime,
    alpha_horizon,
    overshoot_margins,
    solve_constrained_policy,
    xi,
    xi_partial_sum,
)


def ctx(*coords):
    return ContextVector(coords=np.array(coords, dtype=float))


class TestXi:
    def test_frozen_value(self):
        assert xi(100, 0.05, 5) == pytest.approx(0.6073614619083052, abs=1e-12)

    def test_matches_formula(self):
        want = XI_CONSTANT * math.sqrt(5 * math.log(2 / 0.05) / 100)
        assert xi(100, 0.05, 5) == pytest.approx(want)

    def test_capped_at_one(self):
        assert xi(0, 0.2, 2) == 1.0
        assert xi(1, 0.2, 2) == 1.0

    def test_decreasing_in_t(self):
        vals = [xi(t, 0.05, 3) for t in range(0, 2000, 50)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            xi(-1, 0.05, 3)
        with pytest.raises(ValueError):
            xi(10, 1.0, 3)
        with pytest.raises(ValueError):
            xi(10, 0.05, 0)


class TestXiPartialSum:
    def test_frozen_capped_example(self):
        # At T=4, delta=0.2, |X|=2 every summand hits the cap of 1.
        assert xi_partial_sum(4, 0.2, 2) == pytest.approx(4.0)

    def test_matches_direct_sum(self):
        want = sum(xi(t - 1, 0.05, 3) for t in range(1, 31))
        assert xi_partial_sum(30, 0.05, 3) == pytest.approx(want)

    def test_requires_positive_horizon(self):
        with pytest.raises(ValueError):
            xi_partial_sum(0, 0.05, 3)


class TestAlphaBounds:
    def test_frozen_horizon_value(self):
        assert alpha_horizon(10_000, 0.05, 10) == pytest.approx(368.23693208238234, abs=1e-9)

    def test_horizon_matches_formula(self):
        want = math.sqrt(2 * 10_000 * math.log(11 / (0.05 / 4)))
        assert alpha_horizon(10_000, 0.05, 10) == pytest.approx(want)

    def test_anytime_matches_formula(self):
        want = math.sqrt(2 * 50 * math.log(2 * 4 * 1000 / (0.05 / 4)))
        assert alpha_anytime(50, 0.05, 3, 1000) == pytest.approx(want)

    def test_anytime_zero_at_start(self):
        assert alpha_anytime(0, 0.05, 3, 1000) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            alpha_horizon(0, 0.05, 1)
        with pytest.raises(ValueError):
            alpha_horizon(10, 0.05, 0)
        with pytest.raises(ValueError):
            alpha_anytime(-1, 0.05, 1, 10)


class TestOvershootMargins:
    def test_hand_values(self):
        base, general = overshoot_margins(100, alpha=10.0, beta=5.0, xi_sum=3.0)
        assert base == pytest.approx(0.28)
        assert general == pytest.approx(0.31)

    def test_general_dominates_base(self):
        base, general = overshoot_margins(50, 2.0, 1.0, 4.0)
        assert general >= base

    def test_validation(self):
        with pytest.raises(ValueError):
            overshoot_margins(0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            overshoot_margins(10, -1.0, 1.0, 1.0)


class TestEmpiricalContextDistribution:
    def test_uniform_before_data(self):
        dist = EmpiricalContextDistribution([ctx(0.0), ctx(1.0), ctx(2.0)])
        assert dist.probabilities() == pytest.approx([1 / 3] * 3)

    def test_counts_drive_probabilities(self):
        dist = EmpiricalContextDistribution([ctx(0.0), ctx(1.0)])
        for _ in range(3):
            dist.update(ctx(0.0))
        dist.update(ctx(1.0))
        assert dist.probabilities() == pytest.approx([0.75, 0.25])
        assert dist.t == 4
        assert dist.version == 4

    def test_xi_shrinks_with_data(self):
        dist = EmpiricalContextDistribution([ctx(0.0), ctx(1.0)])
        before = dist.xi(0.05)
        for _ in range(500):
            dist.update(ctx(0.0))
        assert dist.xi(0.05) < before

    def test_exact_distribution_is_frozen(self):
        dist = EmpiricalContextDistribution.exact([ctx(0.0), ctx(1.0)], [0.3, 0.7])
        assert dist.is_exact
        assert dist.xi(0.05) == 0.0
        dist.update(ctx(0.0))
        assert dist.probabilities() == pytest.approx([0.3, 0.7])
        assert dist.version == 0

    def test_exact_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            EmpiricalContextDistribution.exact([ctx(0.0), ctx(1.0)], [0.3, 0.3])

    def test_unknown_context_raises(self):
        dist = EmpiricalContextDistribution([ctx(0.0)])
        with pytest.raises(ValueError, match="outside the declared support"):
            dist.update(ctx(9.0))

    def test_duplicate_support_rejected(self):
        with pytest.raises(ValueError):
            EmpiricalContextDistribution([ctx(0.0), ctx(0.0)])

    def test_empty_support_rejected(self):
        with pytest.raises(ValueError):
            EmpiricalContextDistribution([])


class TestSlackSchedule:
    def make(self, mode, **kwargs):
        base = dict(mode=mode, delta=0.05, horizon=10, d=1, support_size=2)
        base.update(kwargs)
        return SlackSchedule(**base)

    def test_soft_slack_is_distribution_xi(self):
        sched = self.make("soft")
        dist = EmpiricalContextDistribution([ctx(0.0), ctx(1.0)])
        assert sched.slack(dist, 0.0) == pytest.approx(dist.xi(0.05 / 4))
        assert sched.slack(dist, 0.0) >= 0.0

    def test_hard_null_slack_is_negative_base_margin(self):
        sched = self.make("hard_null")
        dist = EmpiricalContextDistribution([ctx(0.0), ctx(1.0)])
        base, _ = sched.margins(0.0)
        assert sched.slack(dist, 0.0) == pytest.approx(-base)
        assert sched.slack(dist, 0.0) < 0.0

    def test_hard_general_slack(self):
        sched = self.make("hard_general")
        dist = EmpiricalContextDistribution([ctx(0.0), ctx(1.0)])
        _, general = sched.margins(0.0)
        assert sched.slack(dist, 0.0) == pytest.approx(-general + dist.xi(0.05 / 4))

    def test_margins_use_configured_pieces(self):
        sched = self.make("soft", horizon=100, d=3, support_size=4)
        assert sched.alpha == pytest.approx(alpha_horizon(100, 0.05, 3))
        assert sched.xi_sum == pytest.approx(xi_partial_sum(100, 0.05 / 4, 4))
        assert sched.margins(7.0) == pytest.approx(
            overshoot_margins(100, sched.alpha, 7.0, sched.xi_sum)
        )

    def test_beta_modes(self):
        realized = self.make("hard_null")
        frozen = self.make("hard_null", beta_mode="theoretical", beta_constant=2.0)
        assert realized.beta_value(13.5) == 13.5
        assert frozen.beta_value(13.5) == pytest.approx(
            theoretical_beta_bound(10, 0.05 / 4, 2.0)
        )

    def test_unknown_modes_rejected(self):
        with pytest.raises(ValueError):
            self.make("medium")
        with pytest.raises(ValueError):
            self.make("soft", beta_mode="guessed")


class TestSolveConstrainedPolicy:
    def test_single_context_split(self):
        # Maximize pi_1 subject to pi_1 <= 0.5: the optimum splits evenly.
        sol = solve_constrained_policy(
            weights=np.array([1.0]),
            ucb_rewards=np.array([[0.0, 1.0]]),
            lcb_costs=np.array([[[0.0], [1.0]]]),
            rhs=np.array([0.5]),
        )
        assert sol.feasible
        assert sol.policy == pytest.approx(np.array([[0.5, 0.5]]))
        assert sol.objective == pytest.approx(0.5)

    def test_budget_spent_on_heavier_context(self):
        # Both contexts want the costly action; weights make context 0 three
        # times as common. One unit of weighted budget 0.45 buys the costly
        # action 60% of the time in context 0 (0.75 * 0.6 = 0.45) before
        # anything is left for context 1... the LP instead spends where the
        # reward gain per unit cost is larger: context 1 gains 0.9 per unit
        # cost, context 0 only 0.5, so context 1 saturates first.
        sol = solve_constrained_policy(
            weights=np.array([0.75, 0.25]),
            ucb_rewards=np.array([[0.0, 0.5], [0.0, 0.9]]),
            lcb_costs=np.array([[[0.0], [1.0]], [[0.0], [1.0]]]),
            rhs=np.array([0.45]),
        )
        assert sol.feasible
        assert sol.policy[1] == pytest.approx([0.0, 1.0])  # saturated
        # Remaining weighted budget 0.2 buys 0.2/0.75 of the costly action.
        assert sol.policy[0, 1] == pytest.approx(0.2 / 0.75)
        assert sol.objective == pytest.approx(0.75 * 0.5 * (0.2 / 0.75) + 0.25 * 0.9)

    def test_infeasible_reports_uniform(self):
        sol = solve_constrained_policy(
            weights=np.array([1.0]),
            ucb_rewards=np.array([[0.3, 0.9]]),
            lcb_costs=np.array([[[0.5], [0.8]]]),
            rhs=np.array([-0.1]),
        )
        assert not sol.feasible
        assert sol.policy == pytest.approx(np.array([[0.5, 0.5]]))
        assert math.isnan(sol.objective)

    def test_signed_costs_can_relax_the_cap(self):
        # A negative-cost action frees budget for the expensive one.
        sol = solve_constrained_policy(
            weights=np.array([0.5, 0.5]),
            ucb_rewards=np.array([[1.0, 0.0], [0.4, 0.0]]),
            lcb_costs=np.array([[[1.0], [0.0]], [[-1.0], [0.0]]]),
            rhs=np.array([0.0]),
        )
        assert sol.feasible
        # Context 1's costly action has negative cost: play it fully, then
        # context 0 can afford its own costly action fully as well.
        assert sol.policy[0, 0] == pytest.approx(1.0)
        assert sol.policy[1, 0] == pytest.approx(1.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            solve_constrained_policy(
                weights=np.array([1.0, 1.0]),
                ucb_rewards=np.array([[0.0, 1.0]]),
                lcb_costs=np.array([[[0.0], [1.0]]]),
                rhs=np.array([0.5]),
            )


def primal_fixture(budget=0.5, mode="soft", exact=True, null_action=None, costs=None):
    contexts = [ctx(0.0), ctx(1.0)]
    if costs is None:
        costs = np.array([[[0.0], [1.0]], [[0.0], [1.0]]])
    env = FiniteContextEnv(
        contexts=contexts,
        weights=np.array([0.5, 0.5]),
        rewards=np.array([[0.2, 1.0], [0.4, 0.9]]),
        costs=costs,
        budgets=np.array([budget]),
    )
    if exact:
        dist = EmpiricalContextDistribution.exact(contexts, [0.5, 0.5])
    else:
        dist = EmpiricalContextDistribution(contexts)
    schedule = SlackSchedule(mode=mode, delta=0.05, horizon=10, d=1, support_size=2)
    strat = PrimalStrategy(
        dist, schedule, env.budgets, env.n_actions, null_action=null_action
    )
    return env, OracleEstimator(env), strat


class TestPrimalStrategy:
    def test_oracle_run_solves_once(self):
        env, est, strat = primal_fixture()
        rng = np.random.default_rng(0)
        for _ in range(25):
            x = env.sample_context(rng)
            a = strat.choose(x, est, rng)
            assert a in (0, 1)
        assert strat.solve_count == 1
        assert strat.fallback_count == 0

    def test_updates_invalidate_cache(self):
        env, est, strat = primal_fixture(exact=False)
        rng = np.random.default_rng(1)
        for _ in range(4):
            x = env.sample_context(rng)
            strat.choose(x, est, rng)
            strat.observe(x, 0, 0.0, np.zeros(1), est)
        assert strat.solve_count == 4

    def test_pure_optimum_is_played_deterministically(self):
        # With a slack-free budget of 1 the costly action is affordable
        # everywhere and strictly better: the policy is pure.
        env, est, strat = primal_fixture(budget=1.0)
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = env.sample_context(rng)
            assert strat.choose(x, est, rng) == 1

    def test_infeasible_falls_back_to_null_action(self):
        costs = np.array([[[0.5], [1.0]], [[0.5], [1.0]]])
        env, est, strat = primal_fixture(
            budget=0.0, mode="hard_null", null_action=0, costs=costs
        )
        rng = np.random.default_rng(3)
        for _ in range(5):
            assert strat.choose(env.contexts[0], est, rng) == 0
        assert strat.fallback_count == 5

    def test_infeasible_without_null_goes_uniform(self):
        costs = np.array([[[0.5], [1.0]], [[0.5], [1.0]]])
        env, est, strat = primal_fixture(budget=0.0, mode="hard_null", costs=costs)
        rng = np.random.default_rng(4)
        seen = {strat.choose(env.contexts[0], est, rng) for _ in range(40)}
        assert seen == {0, 1}
        assert strat.fallback_count == 40

    def test_observe_feeds_the_distribution(self):
        env, est, strat = primal_fixture(exact=False)
        strat.observe(env.contexts[1], 0, 0.0, np.zeros(1), est)
        assert strat.dist.counts[1] == 1
        assert strat.warmup_observe is strat.observe or strat.warmup_observe.__func__ is PrimalStrategy.observe

    def test_choose_outside_support_raises(self):
        env, est, strat = primal_fixture()
        with pytest.raises(ValueError):
            strat.choose(ctx(7.0), est, np.random.default_rng(0))

    def test_reporting_surface(self):
        env, est, strat = primal_fixture()
        assert strat.dual_vector == pytest.approx([0.0])
        assert strat.regime == 0
