"""Drill-string simulation with delay-compensating funnel control."""

from .errors import (
    ConfigurationError,
    ConvergenceError,
    DelayBufferError,
    DomainError,
    DrillStringError,
    FunnelViolation,
)
from .model import ArctanScale, DampingSpec, DrillParams, ReferenceSpec, RegularizedCoulomb, UserTable
from .funnel import FunnelConfig, FunnelController
from .config import ExperimentConfig, load_config, load_preset

__version__ = "0.1.0"

__all__ = [
    "ArctanScale",
    "ConfigurationError",
    "ConvergenceError",
    "DampingSpec",
    "DelayBufferError",
    "DomainError",
    "DrillParams",
    "DrillStringError",
    "ExperimentConfig",
    "FunnelConfig",
    "FunnelController",
    "FunnelViolation",
    "ReferenceSpec",
    "RegularizedCoulomb",
    "UserTable",
    "load_config",
    "load_preset",
]
