"""Multilevel Monte Carlo for the Heston 3/2-model with a positivity-preserving Milstein scheme."""

__version__ = "0.1.0"

from .model import ModelParams, Payoff, PayoffKind, validate_params
from .randomness import Role, StreamKey
from .scheme import simulate_coupled_pair, simulate_path
from .mlmc import MlmcConfig, MlmcNotConverged, MlmcResult, run_mlmc, run_single_mc

__all__ = [
    "ModelParams",
    "Payoff",
    "PayoffKind",
    "validate_params",
    "Role",
    "StreamKey",
    "simulate_path",
    "simulate_coupled_pair",
    "MlmcConfig",
    "MlmcNotConverged",
    "MlmcResult",
    "run_mlmc",
    "run_single_mc",
]
