"""Online planning with linearly realizable values: hard instances and TensorPlan."""

from .mdp import BOTTOM, AccessMode, FeatureKind, FeaturizedMDP, Simulator, dp_solve, run_episode
from .tensorplan import TensorPlan, TPConfig, tp_constants

__all__ = [
    "BOTTOM",
    "AccessMode",
    "FeatureKind",
    "FeaturizedMDP",
    "Simulator",
    "TPConfig",
    "TensorPlan",
    "dp_solve",
    "run_episode",
    "tp_constants",
]
