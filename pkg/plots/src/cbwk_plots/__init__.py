"""Benchmark figure rendering from harness CSV outputs."""

from cbwk_plots.figure import PanelColumn, PlotSpec, SchemaError, build_figure, load_series, render

__all__ = ["PanelColumn", "PlotSpec", "SchemaError", "build_figure", "load_series", "render"]
