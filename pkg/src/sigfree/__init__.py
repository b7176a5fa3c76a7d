"""Vehicle sequencing at a two-class signal-free intersection."""
from .core import (CrossingTimeDist, DemandProfile, HeadwayMatrix, HybridState, IntersectionSpec,
                   ModelError, VehicleRecord)
from .policies import TieRule, make_policy

__all__ = [
    "CrossingTimeDist", "DemandProfile", "HeadwayMatrix", "HybridState", "IntersectionSpec",
    "ModelError", "VehicleRecord", "TieRule", "make_policy",
]
__version__ = "0.1.0"
