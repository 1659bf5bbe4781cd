"""The four regimen optimizers and their common result record."""
from .control import ControlProblem, optimize_approximation, optimize_control, projected_gradient
from .enumeration import (
    brute_force_piecewise,
    constant_results,
    evaluation_settings,
    optimize_constant,
    optimize_piecewise,
    piecewise_results,
    piecewise_search,
)
from .result import METHODS, OptimizationResult

__all__ = [
    "METHODS",
    "ControlProblem",
    "OptimizationResult",
    "brute_force_piecewise",
    "constant_results",
    "evaluation_settings",
    "optimize_approximation",
    "optimize_constant",
    "optimize_control",
    "optimize_piecewise",
    "piecewise_results",
    "piecewise_search",
    "projected_gradient",
]
