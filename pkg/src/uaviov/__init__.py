"""UAV-assisted IoV: relay selection, contract ledger and MDRL coordination."""

__version__ = "0.1.0"

from .core import (NormalizationBounds, ScoringWeights, UavInfo, VehicleInfo, ZoneGrid, compute_qou,
                   compute_qov, euclidean_distance, zone_of)
from .env import CoverageEnv, EnvConfig
from .ledger import Ledger, ModelRegistryEntry
from .nn import ActorCritic, Architecture
from .ppo import MDRLCoordinator, PpoHyperparams
from .selection import RelaySelector

__all__ = [
    "ActorCritic", "Architecture", "CoverageEnv", "EnvConfig", "Ledger", "MDRLCoordinator",
    "ModelRegistryEntry", "NormalizationBounds", "PpoHyperparams", "RelaySelector", "ScoringWeights",
    "UavInfo", "VehicleInfo", "ZoneGrid", "compute_qou", "compute_qov", "euclidean_distance", "zone_of",
]
