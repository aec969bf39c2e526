"""Tests for experiment configuration, the round loop, aggregation and output."""

import csv
import json

import numpy as np
import pytest

from cbwk.core import ContextVector, FiniteContextEnv, RoundRecord, Trajectory
from cbwk.dual_strategy import AdaptiveDualStrategy, FixedStepDualStrategy, MixedPolicyStrategy, margin_bT
from cbwk.estimators import BetaAccumulator, LinearUcbEstimator, LogisticUcbEstimator, OracleEstimator
from cbwk.fairness import CourtEnv
from cbwk.harness import (
    ConfigError,
    ExperimentConfig,
    StaticPolicyStrategy,
    aggregate,
    build_env,
    build_estimator,
    build_strategy,
    emit_csv,
    emit_summary_json,
    finite_env_from_dict,
    load_summary,
    prepare_config,
    resolve_margin,
    run_batch,
    run_single,
    tabular_feature_map,
    trajectory_series,
    write_run_outputs,
)
from cbwk.primal_strategy import PrimalStrategy

FINITE_INSTANCE = {
    "contexts": [{"coords": [0.0]}, {"coords": [1.0]}],
    "weights": [0.5, 0.5],
    "rewards": [[0.2, 0.9], [0.6, 0.4]],
    "costs": [[[0.0], [0.8]], [[0.1], [0.5]]],
    "budgets": [0.4],
    "reward_noise": "none",
}


def finite_cfg(**over):
    data = {
        "env": {"kind": "finite", "instance": FINITE_INSTANCE},
        "strategy": {"kind": "pgd_fixed", "gamma": 0.1},
        "estimator": {"kind": "oracle"},
        "horizon": 40,
        "warmup": 5,
        "n_seeds": 3,
    }
    data.update(over)
    return ExperimentConfig.from_dict(data)


def court_cfg(**over):
    data = {
        "env": {"kind": "court", "tau": 0.025},
        "strategy": {"kind": "pgd_fixed", "gamma": 0.05},
        "estimator": {"kind": "logistic", "c_delta": 0.025},
        "horizon": 60,
        "warmup": 10,
        "n_seeds": 2,
        "margin": {"convention": "spend", "b": 0.005},
    }
    data.update(over)
    return ExperimentConfig.from_dict(data)


class TestExperimentConfig:
    def test_defaults(self):
        cfg = finite_cfg()
        assert cfg.warmup == 5 and cfg.base_seed == 0 and cfg.delta == 0.05
        assert cfg.margin == {"convention": "none", "b": 0.0}
        assert not cfg.include_warmup
        assert cfg.label == "pgd_fixed"  # falls back to the strategy kind

    def test_explicit_label_wins(self):
        assert finite_cfg(label="run A").label == "run A"

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            finite_cfg(typo_key=1)

    def test_missing_keys_rejected(self):
        with pytest.raises(ConfigError, match="missing config keys"):
            ExperimentConfig.from_dict({"horizon": 10})

    @pytest.mark.parametrize(
        "over",
        [
            {"horizon": 4},  # below warmup 5
            {"n_seeds": 0},
            {"delta": 0.0},
            {"strategy": {"kind": "quantum"}},
            {"estimator": {"kind": "psychic"}},
            {"margin": {"convention": "sideways", "b": 0.1}},
        ],
    )
    def test_validation(self, over):
        with pytest.raises(ConfigError):
            finite_cfg(**over)

    def test_json_file_round_trip(self, tmp_path):
        cfg = finite_cfg()
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg.to_dict()))
        again = ExperimentConfig.from_json_file(p)
        assert again.to_dict() == cfg.to_dict()

    def test_json_file_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            ExperimentConfig.from_json_file(tmp_path / "nope.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            ExperimentConfig.from_json_file(bad)
        arr = tmp_path / "arr.json"
        arr.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            ExperimentConfig.from_json_file(arr)

    def test_to_dict_detaches_state(self):
        cfg = finite_cfg()
        cfg.to_dict()["strategy"]["gamma"] = 9.9
        assert cfg.strategy["gamma"] == 0.1


class TestBuildEnv:
    def test_court(self):
        env = build_env({"kind": "court", "tau": 0.01, "link": "complement"})
        assert isinstance(env, CourtEnv)
        assert env.tau == 0.01 and env.link == "complement"

    def test_court_requires_tau(self):
        with pytest.raises(ConfigError, match="tau"):
            build_env({"kind": "court"})

    def test_finite_inline(self):
        env = build_env({"kind": "finite", "instance": FINITE_INSTANCE})
        assert isinstance(env, FiniteContextEnv)
        assert env.n_actions == 2

    def test_finite_from_file(self, tmp_path):
        p = tmp_path / "inst.json"
        p.write_text(json.dumps(FINITE_INSTANCE))
        env = build_env({"kind": "finite", "instance_file": str(p)})
        assert env.budgets == pytest.approx([0.4])

    def test_finite_requires_instance(self):
        with pytest.raises(ConfigError, match="instance"):
            build_env({"kind": "finite"})

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown environment"):
            build_env({"kind": "casino"})

    def test_invalid_instance_wrapped(self):
        broken = dict(FINITE_INSTANCE, rewards=[[0.2]])
        with pytest.raises(ConfigError, match="invalid finite instance"):
            finite_env_from_dict(broken)


class TestTabularFeatureMap:
    def test_one_hot_layout(self):
        env = build_env({"kind": "finite", "instance": FINITE_INSTANCE})
        fmap = tabular_feature_map(env)
        assert fmap.dim == 4
        z = fmap(env.contexts[1], 0)
        assert z == pytest.approx([0, 0, 1, 0])


class TestBuildEstimator:
    def test_oracle(self):
        env = build_env({"kind": "finite", "instance": FINITE_INSTANCE})
        assert isinstance(build_estimator({"kind": "oracle"}, env), OracleEstimator)

    def test_logistic_needs_court(self):
        env = build_env({"kind": "finite", "instance": FINITE_INSTANCE})
        with pytest.raises(ConfigError, match="court"):
            build_estimator({"kind": "logistic"}, env)

    def test_logistic_knows_court_costs(self):
        env = CourtEnv(tau=0.025)
        est = build_estimator({"kind": "logistic", "c_delta": 0.025}, env)
        assert isinstance(est, LogisticUcbEstimator)
        x = ContextVector(coords=np.array([0.5, 0.5, 0.5]), group=0)
        assert est.predict_cost(x, 2) == pytest.approx(env.expected_cost(x, 2))
        assert est.cost_epsilon(x, 2) == pytest.approx(np.zeros(10))

    def test_linear_needs_finite(self):
        with pytest.raises(ConfigError, match="finite"):
            build_estimator({"kind": "linear"}, CourtEnv(tau=0.025))

    def test_linear_on_finite(self):
        env = build_env({"kind": "finite", "instance": FINITE_INSTANCE})
        est = build_estimator({"kind": "linear", "c_delta": 0.2}, env)
        assert isinstance(est, LinearUcbEstimator)

    def test_unknown_kind(self):
        env = build_env({"kind": "finite", "instance": FINITE_INSTANCE})
        with pytest.raises(ConfigError):
            build_estimator({"kind": "tarot"}, env)


class TestResolveMargin:
    def test_none(self):
        cfg = finite_cfg()
        env = build_env(cfg.env)
        margin, b = resolve_margin(cfg, env)
        assert margin == pytest.approx([0.0]) and b == 0.0

    def test_uniform(self):
        cfg = finite_cfg(margin={"convention": "uniform", "b": 0.02})
        margin, b = resolve_margin(cfg, build_env(cfg.env))
        assert margin == pytest.approx([0.02]) and b == 0.02

    def test_spend_on_court(self):
        cfg = court_cfg()
        margin, b = resolve_margin(cfg, build_env(cfg.env))
        assert margin == pytest.approx([0.005, 0.005] + [0.0] * 8)
        assert b == 0.005

    def test_spend_needs_two_components(self):
        cfg = finite_cfg(margin={"convention": "spend", "b": 0.01})
        with pytest.raises(ConfigError, match="at least 2"):
            resolve_margin(cfg, build_env(cfg.env))

    def test_auto_bT_matches_closed_form(self):
        cfg = finite_cfg(margin={"convention": "auto_bT", "b": 0.0}, horizon=100)
        margin, b = resolve_margin(cfg, build_env(cfg.env))
        assert b == pytest.approx(margin_bT(100, 0.05, 1))
        assert margin == pytest.approx([b])


class TestBuildStrategy:
    def build(self, cfg):
        env = build_env(cfg.env)
        return build_strategy(cfg, env, BetaAccumulator()), env

    def test_pgd_fixed(self):
        strat, _ = self.build(finite_cfg())
        assert isinstance(strat, FixedStepDualStrategy)
        assert strat.gamma == 0.1

    def test_pgd_fixed_requires_gamma(self):
        cfg = finite_cfg(strategy={"kind": "pgd_fixed"})
        with pytest.raises(ConfigError, match="gamma"):
            self.build(cfg)

    def test_pgd_adaptive(self):
        cfg = finite_cfg(strategy={"kind": "pgd_adaptive", "practical_c": 0.02})
        strat, _ = self.build(cfg)
        assert isinstance(strat, AdaptiveDualStrategy)
        assert strat.cfg.practical_c == 0.02

    def test_primal(self):
        cfg = finite_cfg(strategy={"kind": "primal", "slack_mode": "soft"})
        strat, _ = self.build(cfg)
        assert isinstance(strat, PrimalStrategy)

    def test_primal_rejects_margin(self):
        cfg = finite_cfg(
            strategy={"kind": "primal"}, margin={"convention": "uniform", "b": 0.01}
        )
        with pytest.raises(ConfigError, match="slack itself"):
            self.build(cfg)

    def test_primal_needs_finite_env(self):
        cfg = court_cfg(strategy={"kind": "primal"}, margin={"convention": "none", "b": 0.0})
        with pytest.raises(ConfigError, match="finite"):
            self.build(cfg)

    def test_mixed_requires_lambda_source(self):
        with pytest.raises(ConfigError, match="lambda_source"):
            self.build(finite_cfg(strategy={"kind": "mixed"}))

    def test_mixed_with_fixed_source(self):
        cfg = finite_cfg(
            strategy={"kind": "mixed", "lambda_source": {"kind": "fixed", "value": [0.7]}}
        )
        strat, _ = self.build(cfg)
        assert isinstance(strat, MixedPolicyStrategy)
        assert strat.dual_vector == pytest.approx([0.7])

    def test_mixed_with_unresolved_oracle_source(self):
        cfg = finite_cfg(
            strategy={"kind": "mixed", "lambda_source": {"kind": "oracle", "reps": 2}}
        )
        with pytest.raises(ConfigError, match="prepare_config"):
            self.build(cfg)

    def test_oracle_static_on_finite_plays_lp_policy(self):
        cfg = finite_cfg(strategy={"kind": "oracle_static"})
        strat, _ = self.build(cfg)
        assert isinstance(strat, StaticPolicyStrategy)
        assert strat.policy.sum(axis=1) == pytest.approx(np.ones(2))


class TestPrepareConfig:
    def test_resolves_oracle_lambda_once(self):
        cfg = finite_cfg(
            strategy={
                "kind": "mixed",
                "lambda_source": {"kind": "oracle", "samples": 50, "reps": 2, "iters": 300},
            }
        )
        resolved = prepare_config(cfg)
        source = resolved.strategy["lambda_source"]
        assert source["kind"] == "fixed"
        assert len(source["value"]) == 1 and source["value"][0] >= 0.0
        assert 0.0 <= source["opt_value"] <= 1.0
        # Idempotent: a second pass leaves the resolved source untouched.
        assert prepare_config(resolved).strategy["lambda_source"] == source

    def test_other_strategies_pass_through(self):
        cfg = finite_cfg()
        assert prepare_config(cfg) is cfg


class TestRunSingle:
    def test_deterministic_given_seed(self):
        cfg = finite_cfg(horizon=60)
        a = run_single(cfg, seed=7)
        b = run_single(cfg, seed=7)
        assert np.array_equal(a.reward_array(), b.reward_array())
        assert np.array_equal(a.cost_matrix(), b.cost_matrix())
        assert [r.a for r in a.records] == [r.a for r in b.records]

    def test_warmup_rounds_are_random_and_observed(self):
        cfg = finite_cfg(horizon=12, warmup=12)
        traj = run_single(cfg, seed=0)
        assert len(traj) == 12
        # All rounds in warm-up: the fixed-step dual never moves.
        assert all(r.lambda_before == pytest.approx([0.0]) for r in traj.records)

    def test_regime_recorded_per_round(self):
        cfg = finite_cfg(
            strategy={"kind": "pgd_adaptive", "practical_c": 1e-4}, horizon=30
        )
        traj = run_single(cfg, seed=1)
        regimes = [r.regime for r in traj.records]
        assert regimes == sorted(regimes)
        assert regimes[-1] >= 1  # tiny threshold forces at least one break

    def test_court_round_loop_runs(self):
        traj = run_single(court_cfg(), seed=0)
        assert len(traj) == 60
        assert traj.cost_dim == 10
        assert set(r.a for r in traj.records) <= {0, 1, 2}


class TestTrajectorySeries:
    def toy_trajectory(self):
        x = ContextVector(coords=np.array([0.0]))
        traj = Trajectory(cost_dim=1)
        rewards = [1.0, 0.0, 1.0, 1.0]
        costs = [0.2, 0.4, 0.0, 0.6]
        for t, (r, c) in enumerate(zip(rewards, costs), start=1):
            traj.append(
                RoundRecord(t=t, x=x, a=0, r=r, c=np.array([c]), lambda_before=np.zeros(1))
            )
        return traj

    def test_whole_horizon_averages(self):
        series = trajectory_series(self.toy_trajectory(), court=False, start=0)
        assert series["avg_reward"] == pytest.approx([1.0, 0.5, 2 / 3, 0.75])
        assert series["cost0"] == pytest.approx([0.2, 0.3, 0.2, 0.3])

    def test_rebased_averages_drop_prefix(self):
        series = trajectory_series(self.toy_trajectory(), court=False, start=2)
        # Rounds 3 and 4 only, averaged from scratch.
        assert series["avg_reward"] == pytest.approx([1.0, 1.0])
        assert series["cost0"] == pytest.approx([0.0, 0.3])

    def test_start_bounds_checked(self):
        traj = self.toy_trajectory()
        with pytest.raises(ValueError):
            trajectory_series(traj, court=False, start=-1)
        with pytest.raises(ValueError):
            trajectory_series(traj, court=False, start=5)

    def test_court_keys(self):
        traj = run_single(court_cfg(), seed=0)
        series = trajectory_series(traj, court=True, start=10)
        assert set(series) == {"avg_reward", "ride_cost", "voucher_cost", "fairness"}
        assert series["avg_reward"].size == 50


class TestAggregate:
    def test_matches_reference_fold(self):
        cfg = finite_cfg(horizon=30, warmup=4)
        trajs = [run_single(cfg, seed=s) for s in range(3)]
        series, summary, finals = aggregate(trajs, court=False, label="x", start=4)
        stacked = np.stack([trajectory_series(t, court=False, start=4)["avg_reward"] for t in trajs])
        assert series.columns["avg_reward"][0] == pytest.approx(stacked.mean(axis=0))
        want_se = stacked.std(axis=0, ddof=1) / np.sqrt(3)
        assert series.columns["avg_reward"][1] == pytest.approx(want_se)
        assert series.t[0] == 5 and series.t[-1] == 30
        mean, two_se = summary.metrics["avg_reward"]
        assert mean == pytest.approx(stacked[:, -1].mean())
        assert two_se == pytest.approx(2 * want_se[-1])
        assert finals["avg_reward"] == pytest.approx(stacked[:, -1])

    def test_cum_cost_final_is_whole_run(self):
        cfg = finite_cfg(horizon=20, warmup=10)
        trajs = [run_single(cfg, seed=s) for s in range(2)]
        _, _, finals = aggregate(trajs, court=False, label="x", start=10)
        assert finals["cum_cost"] == pytest.approx(np.stack([t.cum_cost for t in trajs]))

    def test_empty_window_yields_headers_only(self):
        cfg = finite_cfg(horizon=6, warmup=6)
        trajs = [run_single(cfg, seed=s) for s in range(2)]
        series, summary, finals = aggregate(trajs, court=False, label="x", start=6)
        assert series.t.size == 0
        assert summary.metrics == {}
        assert finals["cum_cost"].shape == (2, 1)
        assert "avg_reward" not in finals

    def test_single_run_has_zero_se(self):
        cfg = finite_cfg(horizon=10, warmup=0)
        series, summary, _ = aggregate([run_single(cfg, 0)], court=False, label="x")
        assert series.columns["avg_reward"][1] == pytest.approx(np.zeros(10))
        assert summary.metrics["avg_reward"][1] == 0.0

    def test_requires_trajectories(self):
        with pytest.raises(ValueError):
            aggregate([], court=False, label="x")


class TestRunBatch:
    def test_matches_sequential_runs(self):
        cfg = finite_cfg(horizon=25, n_seeds=3, base_seed=11)
        res = run_batch(cfg)
        for i, traj in enumerate(res.trajectories):
            solo = run_single(cfg, 11 + i)
            assert np.array_equal(traj.reward_array(), solo.reward_array())

    def test_warmup_view_toggle(self):
        base = dict(horizon=30, warmup=10, n_seeds=2)
        rebased = run_batch(finite_cfg(**base))
        full = run_batch(finite_cfg(**base, include_warmup=True))
        # Same trajectories underneath.
        assert np.array_equal(
            rebased.trajectories[0].reward_array(), full.trajectories[0].reward_array()
        )
        assert rebased.series.t.size == 20 and rebased.series.t[0] == 11
        assert full.series.t.size == 30 and full.series.t[0] == 1
        rewards = rebased.trajectories[0].reward_array()
        # Final of the full view averages all 30 rounds; the rebased view
        # averages the last 20 only.
        per_run_full = [t.reward_array().mean() for t in full.trajectories]
        per_run_rebased = [t.reward_array()[10:].mean() for t in rebased.trajectories]
        assert full.summary.metrics["avg_reward"][0] == pytest.approx(np.mean(per_run_full))
        assert rebased.summary.metrics["avg_reward"][0] == pytest.approx(np.mean(per_run_rebased))

    def test_max_regime_final(self):
        cfg = finite_cfg(
            strategy={"kind": "pgd_adaptive", "practical_c": 1e-4}, horizon=30, n_seeds=2
        )
        res = run_batch(cfg)
        assert res.finals["max_regime"].shape == (2,)
        assert np.all(res.finals["max_regime"] >= 1)


class TestOutputs:
    def test_csv_round_trip(self, tmp_path):
        cfg = finite_cfg(horizon=12, warmup=2, n_seeds=2)
        res = run_batch(cfg)
        path = tmp_path / "series.csv"
        emit_csv(res.series, path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "avg_reward_mean", "avg_reward_se", "cost0_mean", "cost0_se"]
        assert len(rows) == 11  # header + rounds 3..12
        assert rows[1][0] == "3"
        mean = res.series.columns["avg_reward"][0][0]
        assert rows[1][1] == f"{mean:.6g}"

    def test_court_csv_header(self, tmp_path):
        res = run_batch(court_cfg(horizon=20, warmup=0, n_seeds=1))
        path = tmp_path / "series.csv"
        emit_csv(res.series, path)
        header = path.read_text().splitlines()[0]
        assert header == (
            "t,avg_reward_mean,avg_reward_se,ride_cost_mean,ride_cost_se,"
            "voucher_cost_mean,voucher_cost_se,fairness_mean,fairness_se"
        )

    def test_empty_window_writes_header_only(self, tmp_path):
        res = run_batch(finite_cfg(horizon=5, warmup=5, n_seeds=2))
        path = tmp_path / "series.csv"
        emit_csv(res.series, path)
        assert path.read_text().splitlines() == ["t,avg_reward_mean,avg_reward_se,cost0_mean,cost0_se"]

    def test_summary_round_trip(self, tmp_path):
        res = run_batch(finite_cfg(horizon=10, n_seeds=2))
        path = tmp_path / "summary.json"
        emit_summary_json([res.summary], path)
        rows = load_summary(path)
        assert rows[0]["label"] == "pgd_fixed"
        assert rows[0]["avg_reward"]["mean"] == pytest.approx(
            res.summary.metrics["avg_reward"][0], rel=1e-5
        )

    def test_write_run_outputs_layout(self, tmp_path):
        cfg = finite_cfg(horizon=10, n_seeds=2)
        res = run_batch(cfg)
        write_run_outputs(cfg, res, tmp_path / "out")
        for name in ("series.csv", "summary.json", "config.json"):
            assert (tmp_path / "out" / name).exists()
        saved = json.loads((tmp_path / "out" / "config.json").read_text())
        assert saved == cfg.to_dict()


class TestStaticPolicyStrategy:
    def test_pure_rows_play_deterministically(self):
        env = build_env({"kind": "finite", "instance": FINITE_INSTANCE})
        strat = StaticPolicyStrategy(env, np.array([[1.0, 0.0], [0.0, 1.0]]))
        rng = np.random.default_rng(0)
        est = OracleEstimator(env)
        assert strat.choose(env.contexts[0], est, rng) == 0
        assert strat.choose(env.contexts[1], est, rng) == 1
        assert strat.regime == 0
        assert strat.dual_vector == pytest.approx([0.0])
