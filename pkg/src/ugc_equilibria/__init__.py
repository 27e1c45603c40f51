"""Equilibrium solvers and oracles for user-generated-content reward games."""
from .core import (ActionProfile, ConfigError, GameConfig, Mechanism, TypeDistribution,
                   total_quality, utility, utility_proportional, utility_topk, validate_profile)

__all__ = [
    "ActionProfile", "ConfigError", "GameConfig", "Mechanism", "TypeDistribution",
    "total_quality", "utility", "utility_proportional", "utility_topk", "validate_profile",
]
__version__ = "0.1.0"
