"""Spectral Schur-complement toolbox for hypocoercive kinetic generators."""

from .basis import BasisSpec, BasisSet, Potential, build_basis
from .errors import ConfigError, HypocoError, InvariantViolation, NumericalFailure

__all__ = [
    "BasisSpec",
    "BasisSet",
    "Potential",
    "build_basis",
    "ConfigError",
    "HypocoError",
    "InvariantViolation",
    "NumericalFailure",
]

__version__ = "0.1.0"
