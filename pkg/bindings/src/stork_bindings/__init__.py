"""Scheduler-style adapter and plotting helpers around stork-solvers."""

from .adapter import SchedulerAdapter
from .plots import PLOT_KINDS, PlotError, plot_report

__all__ = ["SchedulerAdapter", "PLOT_KINDS", "PlotError", "plot_report"]

__version__ = "0.1.0"
