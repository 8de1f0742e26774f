"""Quasi-hole trial states of rotating bosons in the lowest Landau level, studied
through the 2D one-component plasma: mean-field profiles, Monte Carlo sampling,
exact diagonalization and trial-state energetics."""
from .errors import (ConvergenceError, DomainError, IntegrityError, LLLPlasmaError, ResourceError,
                     UnboundedError, UnsupportedError)
from .params import ModelParams

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "LLLPlasmaError",
    "DomainError",
    "ConvergenceError",
    "IntegrityError",
    "ResourceError",
    "UnboundedError",
    "UnsupportedError",
]
