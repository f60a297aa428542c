"""Semi-relativistic Pauli dynamics coupled to self-consistent Maxwell fields."""

from .constants import ATOMIC_UNITS, PhysicalConstants
from .fields import Grid, OrbitalSet

__all__ = ["ATOMIC_UNITS", "PhysicalConstants", "Grid", "OrbitalSet"]
__version__ = "0.1.0"
