"""Figure rendering for the simulator CSV outputs."""

from .render import FigureJob, render_figures, fit_sweep_slope, main

__all__ = ["FigureJob", "render_figures", "fit_sweep_slope", "main"]
