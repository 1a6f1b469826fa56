"""Control landscapes of bilinear quantum systems: critical points, traps and optimizers."""

from .grouplandscape import Gate, Observable, PureState, kinematic_classify
from .propagate import (
    PiecewiseControl,
    objective_gradient,
    objective_hessian,
    objective_value,
    propagate,
)
from .qcore import TOL, ValidationError
from .sysmodel import ControlSystem, larc_classify, registry, theorem2_construct

__version__ = "0.1.0"

__all__ = [
    "TOL",
    "ControlSystem",
    "Gate",
    "Observable",
    "PiecewiseControl",
    "PureState",
    "ValidationError",
    "kinematic_classify",
    "larc_classify",
    "objective_gradient",
    "objective_hessian",
    "objective_value",
    "propagate",
    "registry",
    "theorem2_construct",
]
