"""Resource-exploitation models: lattice simulator and mean-field analyzer."""

from .core import (
    Family,
    InteractionMatrix,
    Regime,
    RegimeReport,
    ReslatError,
    ThetaParams,
    builtin_matrix,
    family_matrix,
)
from .meanfield import classify, integrate, rhs

__version__ = "0.1.0"

__all__ = [
    "Family",
    "InteractionMatrix",
    "Regime",
    "RegimeReport",
    "ReslatError",
    "ThetaParams",
    "builtin_matrix",
    "classify",
    "family_matrix",
    "integrate",
    "rhs",
]
