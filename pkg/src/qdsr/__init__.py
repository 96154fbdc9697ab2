"""Symbolic regression with MAP-Elites, CMA-ES and least squares."""
from .benchmarks import get_target, target_catalog
from .expr import Expression, ScalarMode, evaluate, evaluate_array, random_expression
from .pipeline import RunConfig, run_experiment, run_single
from .scalarfit import ScalarFitConfig, fit_scalars

__all__ = [
    "Expression",
    "RunConfig",
    "ScalarFitConfig",
    "ScalarMode",
    "evaluate",
    "evaluate_array",
    "fit_scalars",
    "get_target",
    "random_expression",
    "run_experiment",
    "run_single",
    "target_catalog",
]
