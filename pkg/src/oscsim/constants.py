"""Fundamental physical constants (CODATA 2018), strict SI."""
from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    """Exact/recommended CODATA 2018 values. Not configurable."""

    q: float = 1.602176634e-19      # elementary charge (C)
    kB: float = 1.380649e-23        # Boltzmann constant (J/K)
    eps0: float = 8.8541878128e-12  # vacuum permittivity (F/m)


CONST = PhysicalConstants()
