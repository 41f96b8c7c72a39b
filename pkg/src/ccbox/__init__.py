"""Chance-constrained trajectory planning around boxes with Gaussian uncertainty."""

from .bounds import BoundingBox, inflate_box, uniform_risk_allocation
from .errors import DomainError, InvariantError, ScenarioError, SolverError
from .gaussian import GaussianBelief, std_normal_cdf, std_normal_quantile
from .ocp import ConstraintKind, Obstacle, OcpConfig, OcpInstance, solve_ocp

__all__ = [
    "BoundingBox",
    "ConstraintKind",
    "DomainError",
    "GaussianBelief",
    "InvariantError",
    "Obstacle",
    "OcpConfig",
    "OcpInstance",
    "ScenarioError",
    "SolverError",
    "inflate_box",
    "solve_ocp",
    "std_normal_cdf",
    "std_normal_quantile",
    "uniform_risk_allocation",
]

__version__ = "0.1.0"
