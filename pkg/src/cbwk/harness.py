"""Experiment orchestration: seeded runs, batches, aggregation, CSV/JSON output.

A single JSON config file describes one run set: the environment (court
simulation or an explicit finite instance), the estimator, the strategy, the
horizon/warm-up/seed counts, and the budget margin convention. ``run_single``
executes one seeded trajectory; ``run_batch`` executes N of them (seeds
base..base+N-1, optionally in parallel), aggregates running averages into
mean and standard-error series, and produces a final-round summary row.

Round loop (identical for every strategy): sample the context; during warm-up
play a uniformly random action, afterwards ask the strategy; draw reward and
cost; accumulate the estimator's current optimism width; let the strategy
observe (outside warm-up); update the estimator; log the round.

CSV schema for the court environment, one row per round:

    t,avg_reward_mean,avg_reward_se,ride_cost_mean,ride_cost_se,
    voucher_cost_mean,voucher_cost_se,fairness_mean,fairness_se

Synthetic finite environments use avg_reward plus cost0..cost{d-1} columns.
The ``_se`` columns carry one standard error; summaries carry 2 SE. Floats
are written with 6 significant digits. By default the averages are based at
t = warmup+1 (rows start there and describe the strategy's own play); setting
include_warmup bases them at t = 1 so warm-up rounds count too.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ContextVector, Environment, FiniteContextEnv, RoundRecord, Trajectory
from .dual_strategy import (
    AdaptiveConfig,
    AdaptiveDualStrategy,
    FixedStepDualStrategy,
    MixedPolicyStrategy,
    PgdConfig,
    margin_bT,
)
from .estimators import (
    BaseEstimator,
    BetaAccumulator,
    FeatureMap,
    LinearUcbEstimator,
    LogisticUcbEstimator,
    OracleEstimator,
)
from .fairness import (
    COURT_COST_DIM,
    CourtEnv,
    court_feature_vector,
    fairness_running_metric,
    spend_margin_vector,
    uniform_margin_vector,
)
from .oracles import DualSample, brute_force_policy, estimate_opt
from .primal_strategy import (
    XI_CONSTANT,
    EmpiricalContextDistribution,
    PrimalStrategy,
    SlackSchedule,
)

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("pgd_fixed", "pgd_adaptive", "primal", "mixed", "oracle_static")
ESTIMATOR_KINDS = ("logistic", "linear", "oracle")
MARGIN_CONVENTIONS = ("none", "uniform", "spend", "auto_bT")


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to a CLI usage error)."""


@dataclass
class ExperimentConfig:
    """One run set: environment, estimator, strategy, horizon and seeds."""

    env: dict
    strategy: dict
    estimator: dict
    horizon: int
    warmup: int = 0
    n_seeds: int = 20
    base_seed: int = 0
    delta: float = 0.05
    margin: dict = field(default_factory=lambda: {"convention": "none", "b": 0.0})
    include_warmup: bool = False
    label: str = ""

    _FIELDS = (
        "env",
        "strategy",
        "estimator",
        "horizon",
        "warmup",
        "n_seeds",
        "base_seed",
        "delta",
        "margin",
        "include_warmup",
        "label",
    )

    def __post_init__(self) -> None:
        if not (self.horizon >= self.warmup >= 0):
            raise ConfigError("require horizon >= warmup >= 0")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be at least 1")
        if not (0.0 < self.delta < 1.0):
            raise ConfigError("delta must lie in (0, 1)")
        kind = self.strategy.get("kind")
        if kind not in STRATEGY_KINDS:
            raise ConfigError(f"strategy.kind must be one of {STRATEGY_KINDS}, got {kind!r}")
        if self.estimator.get("kind") not in ESTIMATOR_KINDS:
            raise ConfigError(f"estimator.kind must be one of {ESTIMATOR_KINDS}")
        convention = self.margin.get("convention", "none")
        if convention not in MARGIN_CONVENTIONS:
            raise ConfigError(f"margin.convention must be one of {MARGIN_CONVENTIONS}")
        if not self.label:
            self.label = kind

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls._FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"env", "strategy", "estimator", "horizon"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {name: copy.deepcopy(getattr(self, name)) for name in self._FIELDS}


def build_env(env_spec: dict) -> Environment:
    kind = env_spec.get("kind")
    if kind == "court":
        if "tau" not in env_spec:
            raise ConfigError("court environment requires a tau value")
        return CourtEnv(tau=float(env_spec["tau"]), link=env_spec.get("link", "sigmoid"))
    if kind == "finite":
        if "instance" in env_spec:
            instance = env_spec["instance"]
        elif "instance_file" in env_spec:
            instance = json.loads(Path(env_spec["instance_file"]).read_text())
        else:
            raise ConfigError("finite environment requires instance or instance_file")
        return finite_env_from_dict(instance)
    raise ConfigError(f"unknown environment kind {kind!r}")


def finite_env_from_dict(instance: dict) -> FiniteContextEnv:
    try:
        contexts = [ContextVector(np.asarray(c["coords"], dtype=float), c.get("group")) for c in instance["contexts"]]
        return FiniteContextEnv(
            contexts=contexts,
            weights=np.asarray(instance["weights"], dtype=float),
            rewards=np.asarray(instance["rewards"], dtype=float),
            costs=np.asarray(instance["costs"], dtype=float),
            budgets=np.asarray(instance["budgets"], dtype=float),
            cost_noise=instance.get("cost_noise", "none"),
            reward_noise=instance.get("reward_noise", "bernoulli"),
            null_action=instance.get("null_action"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid finite instance: {exc}") from exc


def tabular_feature_map(env: FiniteContextEnv) -> FeatureMap:
    """One-hot features over (context, action) pairs for finite instances."""
    n_actions = env.n_actions
    dim = len(env.contexts) * n_actions

    def evaluate(x: ContextVector, a: int) -> np.ndarray:
        z = np.zeros(dim)
        z[env.context_index(x) * n_actions + a] = 1.0
        return z

    return FeatureMap(dim=dim, evaluate=evaluate)


def build_estimator(est_spec: dict, env: Environment) -> BaseEstimator:
    kind = est_spec["kind"]
    if kind == "oracle":
        return OracleEstimator(env)
    if kind == "logistic":
        if not isinstance(env, CourtEnv):
            raise ConfigError("the logistic estimator is wired to the court feature map")
        known = env.expected_cost if est_spec.get("known_cost", True) else None
        return LogisticUcbEstimator(
            feature_map=FeatureMap(dim=5, evaluate=court_feature_vector),
            cost_dim=env.cost_dim,
            c_delta=float(est_spec.get("c_delta", 0.025)),
            reg=float(est_spec.get("reg", 0.0)),
            known_cost=known,
        )
    if kind == "linear":
        if not isinstance(env, FiniteContextEnv):
            raise ConfigError("the linear estimator uses tabular features and needs a finite instance")
        return LinearUcbEstimator(
            feature_map=tabular_feature_map(env),
            cost_dim=env.cost_dim,
            c_delta=float(est_spec.get("c_delta", 0.1)),
            reg=float(est_spec.get("reg", 1.0)),
        )
    raise ConfigError(f"unknown estimator kind {kind!r}")


def resolve_margin(cfg: ExperimentConfig, env: Environment) -> tuple[np.ndarray, float]:
    """Margin vector subtracted from the budgets, plus its scalar parameter."""
    d = env.cost_dim
    convention = cfg.margin.get("convention", "none")
    b = float(cfg.margin.get("b", 0.0))
    if convention == "none":
        return np.zeros(d), 0.0
    if convention == "uniform":
        return uniform_margin_vector(b, d), b
    if convention == "spend":
        if d < 2:
            raise ConfigError("spend margin convention needs at least 2 cost components")
        return spend_margin_vector(b, d), b
    # auto_bT: closed-form horizon margin on every component
    spec = cfg.strategy if cfg.strategy.get("kind") == "pgd_adaptive" else {}
    acfg = AdaptiveConfig(
        delta=cfg.delta,
        horizon=cfg.horizon,
        budgets=env.budgets if hasattr(env, "budgets") else np.ones(d),
        threshold_mode=spec.get("threshold_mode", "theoretical"),
        practical_c=spec.get("practical_c", 0.01),
        beta_constant=spec.get("beta_constant", 1.0),
    )
    b_auto = margin_bT(cfg.horizon, cfg.delta, d, acfg)
    return uniform_margin_vector(b_auto, d), b_auto


def env_budgets(env: Environment) -> np.ndarray:
    if isinstance(env, CourtEnv):
        return env.budgets
    if isinstance(env, FiniteContextEnv):
        return env.budgets
    raise ConfigError("environment does not declare budgets")


class StaticPolicyStrategy:
    """Play a fixed per-context action distribution; no learning, no duals."""

    def __init__(self, env: FiniteContextEnv, policy: np.ndarray):
        self.env = env
        self.policy = np.asarray(policy, dtype=float)
        self._zeros = np.zeros(env.cost_dim)

    @property
    def dual_vector(self) -> np.ndarray:
        return self._zeros

    @property
    def regime(self) -> int:
        return 0

    def choose(self, x: ContextVector, est: BaseEstimator, rng: np.random.Generator) -> int:
        row = self.policy[self.env.context_index(x)]
        return int(rng.choice(row.size, p=row))

    def observe(self, x, a, r, c, est) -> None:
        pass


def prepare_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Resolve oracle-computed quantities (the fixed dual vector) once.

    Batches call this before fanning out so every seed shares the same
    resolved values and workers stay cheap. Idempotent.
    """
    spec = cfg.strategy
    source = spec.get("lambda_source")
    if spec.get("kind") not in ("mixed", "oracle_static") or source is None or source.get("kind") != "oracle":
        return cfg
    env = build_env(cfg.env)
    margin, _ = resolve_margin(cfg, env)
    target = env_budgets(env) - margin
    est = estimate_opt(
        env,
        target,
        n_samples=int(source.get("samples", 10000)),
        reps=int(source.get("reps", 20)),
        seed=int(source.get("seed", 0)),
        iters=int(source.get("iters", 2000)),
    )
    data = cfg.to_dict()
    data["strategy"]["lambda_source"] = {
        "kind": "fixed",
        "value": [float(v) for v in est.lambda_star],
        "opt_value": float(est.value),
    }
    return ExperimentConfig.from_dict(data)


def build_strategy(cfg: ExperimentConfig, env: Environment, beta_tracker: BetaAccumulator):
    spec = cfg.strategy
    kind = spec["kind"]
    budgets = env_budgets(env)
    margin, margin_b = resolve_margin(cfg, env)

    if kind == "pgd_fixed":
        if "gamma" not in spec:
            raise ConfigError("pgd_fixed requires a gamma value")
        pcfg = PgdConfig(
            gamma=float(spec["gamma"]),
            delta=cfg.delta,
            budgets=budgets,
            horizon=cfg.horizon,
            margin=margin,
            margin_b=margin_b,
        )
        return FixedStepDualStrategy(pcfg, env.n_actions)

    if kind == "pgd_adaptive":
        acfg = AdaptiveConfig(
            delta=cfg.delta,
            horizon=cfg.horizon,
            budgets=budgets,
            margin=margin,
            margin_b=margin_b,
            threshold_mode=spec.get("threshold_mode", "practical"),
            practical_c=float(spec.get("practical_c", 0.01)),
            beta_constant=float(spec.get("beta_constant", 1.0)),
        )
        return AdaptiveDualStrategy(acfg, env.n_actions)

    if kind == "primal":
        if not isinstance(env, FiniteContextEnv):
            raise ConfigError("the primal strategy needs a finite context instance")
        if cfg.margin.get("convention", "none") != "none":
            raise ConfigError("the primal strategy manages slack itself; set margin convention to none")
        xi_constant = float(spec.get("xi_constant", XI_CONSTANT))
        if spec.get("exact_distribution", False):
            dist = EmpiricalContextDistribution.exact(env.contexts, env.weights)
        else:
            dist = EmpiricalContextDistribution(env.contexts, xi_constant=xi_constant)
        schedule = SlackSchedule(
            mode=spec.get("slack_mode", "soft"),
            delta=cfg.delta,
            horizon=cfg.horizon,
            d=env.cost_dim,
            support_size=len(env.contexts),
            xi_constant=xi_constant,
            beta_mode=spec.get("beta_mode", "realized"),
            beta_constant=float(spec.get("beta_constant", 1.0)),
        )
        return PrimalStrategy(
            dist,
            schedule,
            budgets,
            env.n_actions,
            null_action=env.null_action,
            beta_tracker=beta_tracker,
        )

    if kind == "mixed" or (kind == "oracle_static" and isinstance(env, CourtEnv)):
        source = spec.get("lambda_source")
        if source is None or source.get("kind") not in ("fixed", "oracle"):
            raise ConfigError(f"{kind} requires lambda_source of kind fixed or oracle")
        if source["kind"] == "oracle":
            raise ConfigError("unresolved oracle lambda_source; run prepare_config first")
        lam = np.asarray(source["value"], dtype=float)
        return MixedPolicyStrategy(lam, budgets - margin, env.n_actions)

    # oracle_static on a finite instance: the exact LP policy at B - margin
    sample = DualSample.from_finite_instance(env, budgets - margin)
    return StaticPolicyStrategy(env, brute_force_policy(sample).policy)


def run_single(cfg: ExperimentConfig, seed: int) -> Trajectory:
    """One seeded trajectory; deterministic given (config, seed)."""
    cfg = prepare_config(cfg)
    env = build_env(cfg.env)
    est = build_estimator(cfg.estimator, env)
    beta_tracker = BetaAccumulator()
    strategy = build_strategy(cfg, env, beta_tracker)
    warmup_observe = getattr(strategy, "warmup_observe", None)

    rng = np.random.default_rng(seed)
    traj = Trajectory(cost_dim=env.cost_dim)
    for t in range(1, cfg.horizon + 1):
        x = env.sample_context(rng)
        if t <= cfg.warmup:
            a = int(rng.integers(env.n_actions))
        else:
            a = strategy.choose(x, est, rng)
        r = env.sample_reward(x, a, rng)
        c = env.sample_cost(x, a, rng)
        beta_tracker.add(est.epsilon(x, a))
        lam_before = strategy.dual_vector.copy()
        if t > cfg.warmup:
            strategy.observe(x, a, r, c, est)
        elif warmup_observe is not None:
            warmup_observe(x, a, r, c, est)
        est.update(x, a, r, c)
        traj.append(RoundRecord(t=t, x=x, a=a, r=r, c=c, lambda_before=lam_before, regime=strategy.regime))
    return traj


def _worker_run(payload: tuple[dict, int]) -> Trajectory:
    data, seed = payload
    return run_single(ExperimentConfig.from_dict(data), seed)


def trajectory_series(traj: Trajectory, court: bool, start: int = 0) -> dict[str, np.ndarray]:
    """Per-round running averages for one trajectory, keyed like the CSV.

    ``start`` rebases the averages: round ``start+1`` becomes the first
    averaged round. The default view drops the warm-up rounds entirely so the
    reported averages describe the strategy's own play; ``start=0`` restores
    whole-horizon averages.
    """
    if not 0 <= start <= len(traj):
        raise ValueError("start must lie in [0, len(traj)]")
    n = len(traj) - start
    t = np.arange(1, n + 1, dtype=float)
    rewards = traj.reward_array()[start:]
    costs = traj.cost_matrix()[start:]
    running_cost = np.cumsum(costs, axis=0) / t[:, None]
    series = {"avg_reward": np.cumsum(rewards) / t}
    if court:
        series["ride_cost"] = running_cost[:, 0]
        series["voucher_cost"] = running_cost[:, 1]
        series["fairness"] = fairness_running_metric(costs)
    else:
        for k in range(traj.cost_dim):
            series[f"cost{k}"] = running_cost[:, k]
    return series


@dataclass
class AggregateSeries:
    """Across-run mean and standard error of each running-average series."""

    t: np.ndarray
    columns: dict[str, tuple[np.ndarray, np.ndarray]]  # key -> (mean, se)


@dataclass
class SummaryRow:
    """Final-round summary: per-series mean with 2 standard errors."""

    label: str
    metrics: dict[str, tuple[float, float]]  # key -> (mean, two_se)

    def to_dict(self) -> dict:
        out: dict = {"label": self.label}
        for key, (mean, two_se) in self.metrics.items():
            out[key] = {"mean": _sig6(mean), "two_se": _sig6(two_se)}
        return out


@dataclass
class BatchResult:
    series: AggregateSeries
    summary: SummaryRow
    finals: dict[str, np.ndarray]  # per-run final values, ordered by seed
    trajectories: list[Trajectory]


def aggregate(
    trajectories: list[Trajectory], court: bool, label: str, start: int = 0
) -> tuple[AggregateSeries, SummaryRow, dict[str, np.ndarray]]:
    """Fold per-run series into mean/SE columns plus per-run finals.

    ``start`` is forwarded to trajectory_series. ``finals["cum_cost"]`` always
    holds whole-run cumulative costs (budget audits care about every round);
    the per-series finals and the summary describe the selected window, and are
    omitted when the window is empty.
    """
    if not trajectories:
        raise ValueError("no trajectories to aggregate")
    per_run = [trajectory_series(traj, court, start) for traj in trajectories]
    n = len(per_run)
    t = np.arange(start + 1, len(trajectories[0]) + 1)
    columns: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    finals: dict[str, np.ndarray] = {}
    for key in per_run[0]:
        stacked = np.stack([series[key] for series in per_run])
        mean = stacked.mean(axis=0)
        se = stacked.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
        columns[key] = (mean, se)
        if stacked.shape[1]:
            finals[key] = stacked[:, -1].copy()
    finals["cum_cost"] = np.stack([traj.cum_cost for traj in trajectories])
    finals["max_regime"] = np.array([max(rec.regime for rec in traj.records) for traj in trajectories])
    series = AggregateSeries(t=t, columns=columns)
    summary = SummaryRow(
        label=label,
        metrics={key: (float(mean[-1]), float(2.0 * se[-1])) for key, (mean, se) in columns.items() if mean.size},
    )
    return series, summary, finals


def run_batch(cfg: ExperimentConfig, jobs: int = 1) -> BatchResult:
    """Run n_seeds trajectories (seeds base..base+N-1) and aggregate them."""
    cfg = prepare_config(cfg)
    seeds = [cfg.base_seed + i for i in range(cfg.n_seeds)]
    if jobs > 1:
        payloads = [(cfg.to_dict(), seed) for seed in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trajectories = list(pool.map(_worker_run, payloads))
    else:
        trajectories = [run_single(cfg, seed) for seed in seeds]
    court = cfg.env.get("kind") == "court"
    start = 0 if cfg.include_warmup else cfg.warmup
    series, summary, finals = aggregate(trajectories, court, cfg.label, start=start)
    return BatchResult(series=series, summary=summary, finals=finals, trajectories=trajectories)


def _sig6(value: float) -> float:
    return float(f"{value:.6g}")


def emit_csv(series: AggregateSeries, path) -> None:
    """Write the aggregate series, one row per round (header only if empty)."""
    path = Path(path)
    header = ["t"]
    for key in series.columns:
        header += [f"{key}_mean", f"{key}_se"]
    try:
        with path.open("w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(series.t.size):
                row = [str(int(series.t[i]))]
                for mean, se in series.columns.values():
                    row += [f"{mean[i]:.6g}", f"{se[i]:.6g}"]
                writer.writerow(row)
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc


def emit_summary_json(rows: list[SummaryRow], path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="\n") as fh:
            json.dump({"rows": [row.to_dict() for row in rows]}, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc


def load_summary(path) -> list[dict]:
    data = json.loads(Path(path).read_text())
    return data["rows"]


def write_run_outputs(cfg: ExperimentConfig, result: BatchResult, out_dir) -> None:
    """Standard run-set layout: series.csv, summary.json, config.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(result.series, out / "series.csv")
    emit_summary_json([result.summary], out / "summary.json")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
