"""Render the four-row benchmark figure from harness CSV series.

The simulation harness writes running-average series as CSV with columns
``t`` plus ``<metric>_mean`` and ``<metric>_se`` for the four court
metrics (average reward, rideshare cost, voucher cost, fairness gap).
This module reads one or more such files and draws the summary figure:
four stacked panels per tau column, solid mean lines with shaded
plus/minus two standard error bands, and dashed horizontal reference
lines (optimal values on the reward panel, per-resource budgets on the
cost panels, the fairness tolerance on the bottom panel).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["SchemaError", "PanelColumn", "PlotSpec", "load_series", "build_figure", "render"]

# metric key -> panel label, top to bottom
PANELS = (
    ("avg_reward", "average reward"),
    ("ride_cost", "rideshare cost"),
    ("voucher_cost", "voucher cost"),
    ("fairness", "fairness gap"),
)

REQUIRED_COLUMNS = ("t",) + tuple(
    f"{key}_{suffix}" for key, _ in PANELS for suffix in ("mean", "se")
)

OUTPUT_SUFFIXES = (".png", ".svg")

REFERENCE_STYLE = {"linestyle": "--", "linewidth": 1.0}


class SchemaError(ValueError):
    """A CSV file does not match the documented harness schema."""


def load_series(path: Path) -> dict[str, np.ndarray]:
    """Parse one harness CSV into arrays keyed by column name."""
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        for column in REQUIRED_COLUMNS:
            if column not in fields:
                raise SchemaError(f"{path}: missing column '{column}'")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    out: dict[str, np.ndarray] = {}
    for column in REQUIRED_COLUMNS:
        try:
            out[column] = np.array([float(row[column]) for row in rows])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: non-numeric value in column '{column}'") from exc
    return out


@dataclass(frozen=True)
class PanelColumn:
    """One figure column: the runs to overlay and its reference lines."""

    runs: tuple[tuple[str, Path], ...]
    tau: float
    opt_b: float | None = None
    opt_b_prime: float | None = None
    ride_budget: float = 0.05
    voucher_budget: float = 0.20

    def __post_init__(self):
        if not self.runs:
            raise ValueError("a panel column needs at least one (label, csv) run")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path) -> "PanelColumn":
        if "runs" not in data or "tau" not in data:
            raise ValueError("panel column needs 'runs' and 'tau'")
        runs = []
        for entry in data["runs"]:
            label, csv_path = entry
            runs.append((str(label), base_dir / Path(csv_path)))
        kwargs = {}
        for key in ("opt_b", "opt_b_prime", "ride_budget", "voucher_budget"):
            if key in data and data[key] is not None:
                kwargs[key] = float(data[key])
        return cls(runs=tuple(runs), tau=float(data["tau"]), **kwargs)


@dataclass(frozen=True)
class PlotSpec:
    """Figure description: one or more columns and the output image path."""

    columns: tuple[PanelColumn, ...]
    out: Path

    def __post_init__(self):
        if not self.columns:
            raise ValueError("plot spec needs at least one column")
        if self.out.suffix.lower() not in OUTPUT_SUFFIXES:
            raise ValueError(
                f"output path must end in one of {OUTPUT_SUFFIXES}, got '{self.out.name}'"
            )

    @classmethod
    def from_json_file(cls, path: Path) -> "PlotSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict) or "out" not in data:
            raise ValueError(f"{path}: spec must be a JSON object with an 'out' path")
        base_dir = path.resolve().parent
        raw_columns = data["columns"] if "columns" in data else [data]
        columns = tuple(PanelColumn.from_dict(col, base_dir) for col in raw_columns)
        out = Path(data["out"])
        if not out.is_absolute():
            out = base_dir / out
        return cls(columns=columns, out=out)


def _draw_column(axes, column: PanelColumn) -> None:
    for label, csv_path in column.runs:
        data = load_series(csv_path)
        t = data["t"]
        for ax, (key, _) in zip(axes, PANELS):
            mean = data[f"{key}_mean"]
            band = 2.0 * data[f"{key}_se"]
            (line,) = ax.plot(t, mean, label=label, linewidth=1.4)
            ax.fill_between(t, mean - band, mean + band,
                            color=line.get_color(), alpha=0.2, linewidth=0)
    if column.opt_b is not None:
        axes[0].axhline(column.opt_b, color="black", label="OPT(B)", **REFERENCE_STYLE)
    if column.opt_b_prime is not None:
        axes[0].axhline(column.opt_b_prime, color="gray", label="OPT(B')", **REFERENCE_STYLE)
    axes[1].axhline(column.ride_budget, color="black", **REFERENCE_STYLE)
    axes[2].axhline(column.voucher_budget, color="black", **REFERENCE_STYLE)
    axes[3].axhline(column.tau, color="black", **REFERENCE_STYLE)
    axes[0].set_title(f"tau = {column.tau:g}")
    axes[0].legend(fontsize=8, loc="lower right")
    axes[-1].set_xlabel("round")


def build_figure(spec: PlotSpec):
    """Build the matplotlib figure for a spec without saving it."""
    n_cols = len(spec.columns)
    fig, axes = plt.subplots(
        len(PANELS), n_cols,
        figsize=(5.2 * n_cols, 10.0),
        sharex="col",
        squeeze=False,
    )
    for j, column in enumerate(spec.columns):
        _draw_column([axes[i][j] for i in range(len(PANELS))], column)
    for i, (_, panel_label) in enumerate(PANELS):
        axes[i][0].set_ylabel(panel_label)
    fig.tight_layout()
    return fig


def render(spec: PlotSpec) -> Path:
    """Render a spec to its output image (PNG or SVG by extension)."""
    fig = build_figure(spec)
    try:
        spec.out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.out)
    finally:
        plt.close(fig)
    return spec.out
