"""Transport-based mixing measures, negative Sobolev norms and stirring experiments on the periodic torus."""

from .field import DensityPair, PeriodicGrid, ScalarField
from .norms import bv_seminorm, hminus1
from .transport import CostFunction, mixing_measure, mkr_distance

__all__ = [
    "CostFunction",
    "DensityPair",
    "PeriodicGrid",
    "ScalarField",
    "bv_seminorm",
    "hminus1",
    "mixing_measure",
    "mkr_distance",
]
__version__ = "0.1.0"
