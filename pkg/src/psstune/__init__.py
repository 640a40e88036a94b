"""Hybrid DAE transient simulation, trajectory sensitivities and PSS tuning."""

from .hybrid import AugmentedState, Dims, EventSpec, HybridModel
from .simulator import IntegratorConfig, JunctionRecord, Trajectory, simulate
from .sensitivity import (
    SensitivityPair,
    SensitivityTrajectory,
    fd_sensitivity,
    propagate_sensitivities,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedState",
    "Dims",
    "EventSpec",
    "HybridModel",
    "IntegratorConfig",
    "JunctionRecord",
    "SensitivityPair",
    "SensitivityTrajectory",
    "Trajectory",
    "fd_sensitivity",
    "propagate_sensitivities",
    "simulate",
]
