"""Physical constants, Hartree atomic units by default."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

C_ATOMIC = 137.035999


@dataclass(frozen=True)
class PhysicalConstants:
    """hbar, electron mass and charge, speed of light and vacuum permittivity.

    The permeability is derived so that ``eps0 * mu0 * c**2 == 1``.
    """

    hbar: float = 1.0
    mass: float = 1.0
    charge: float = -1.0
    c: float = C_ATOMIC
    eps0: float = 1.0 / (4.0 * math.pi)

    def __post_init__(self):
        for name in ("hbar", "mass", "c", "eps0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if not math.isfinite(self.charge):
            raise ValueError("charge must be finite")

    @property
    def mu0(self) -> float:
        return 1.0 / (self.eps0 * self.c * self.c)

    def with_c(self, c: float) -> "PhysicalConstants":
        return dataclasses.replace(self, c=float(c))

    def as_tuple(self):
        return (self.hbar, self.mass, self.charge, self.c, self.eps0)


ATOMIC_UNITS = PhysicalConstants()
