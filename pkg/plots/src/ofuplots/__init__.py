"""Post-hoc figures for benchmark CSV outputs."""

from .render import PlotSpec, fit_loglog_slope, read_run_file, read_summary_file, render

__version__ = "0.1.0"
