"""Uniform sampling from polytopes with Dikin, Vaidya and John walks."""

from .barriers import (
    LocalMetric,
    john_metric,
    john_weights,
    leverage_scores,
    local_metric,
    log_barrier_hessian,
    vaidya_metric,
)
from .errors import PolywalkError
from .polytope import Polytope, analytic_center, generate, load, new_polytope, save
from .walks import (
    ChainState,
    Ensemble,
    Trajectory,
    WalkConfig,
    init_state,
    run_chain,
    step,
    tune_radius,
)

__all__ = [
    "ChainState",
    "Ensemble",
    "LocalMetric",
    "Polytope",
    "PolywalkError",
    "Trajectory",
    "WalkConfig",
    "analytic_center",
    "generate",
    "init_state",
    "john_metric",
    "john_weights",
    "leverage_scores",
    "load",
    "local_metric",
    "log_barrier_hessian",
    "new_polytope",
    "run_chain",
    "save",
    "step",
    "tune_radius",
    "vaidya_metric",
]

__version__ = "0.1.0"
