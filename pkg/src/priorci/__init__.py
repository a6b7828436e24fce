"""Confidence intervals for a linear combination of regression parameters that
exploit uncertain prior information about other combinations."""

__version__ = "0.1.0"

from .distributions import density_V, density_W, expected_W, t_quantile
from .evaluator import (
    PerformanceCurve,
    ProblemConfig,
    coverage_probability,
    evaluate_curve,
    scaled_expected_length,
    sel_at_zero,
)
from .montecarlo import SimulationPlan, SimulationResult, simulate
from .optimizer import DesignProblem, DesignResult, design_d, sweep_s
from .regression import RegressionProblem, factorial_2_3, interval, summarize
from .spline import DFunction, KnotGrid

__all__ = [
    "DFunction",
    "DesignProblem",
    "DesignResult",
    "KnotGrid",
    "PerformanceCurve",
    "ProblemConfig",
    "RegressionProblem",
    "SimulationPlan",
    "SimulationResult",
    "coverage_probability",
    "density_V",
    "density_W",
    "design_d",
    "evaluate_curve",
    "expected_W",
    "factorial_2_3",
    "interval",
    "scaled_expected_length",
    "sel_at_zero",
    "simulate",
    "summarize",
    "sweep_s",
    "t_quantile",
]
