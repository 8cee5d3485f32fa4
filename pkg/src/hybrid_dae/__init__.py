"""Gradient-based parameter identification for hybrid differential-algebraic systems."""

from .errors import HybridDAEError, InvalidArgumentError, NumericalFailure
from .model import Dims, ModelSpec, ParameterLayout, assemble_full_params
from .simulator import EventSplitTrajectory, SimConfig, simulate

__all__ = [
    "Dims",
    "EventSplitTrajectory",
    "HybridDAEError",
    "InvalidArgumentError",
    "ModelSpec",
    "NumericalFailure",
    "ParameterLayout",
    "SimConfig",
    "assemble_full_params",
    "simulate",
]
