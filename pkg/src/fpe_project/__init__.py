"""Projection of one-dimensional Fokker-Planck dynamics onto exponential families."""

from .errors import FpeProjectError, NumericFailure, ValidationError
from .expfam import Background, ExpFamily, Moments
from .fields import Field, Poly, SmoothField
from .ode import IvpProblem, Trajectory, integrate
from .projection import projected_flow, projected_rhs, residual
from .sde import SdeModel

__version__ = "0.1.0"

__all__ = [
    "Background",
    "ExpFamily",
    "Field",
    "FpeProjectError",
    "IvpProblem",
    "Moments",
    "NumericFailure",
    "Poly",
    "SdeModel",
    "SmoothField",
    "Trajectory",
    "ValidationError",
    "integrate",
    "projected_flow",
    "projected_rhs",
    "residual",
]
