"""Simulation laboratory for two-dimensional Ginzburg-Landau gradient fields."""
from ._core import BACKEND
from .lattice import LatticeDomain, SiteSet, build_box, dist_to_boundary, l1_ball
from .potential import Potential, dipole_gas, quadratic, validate

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "LatticeDomain", "SiteSet", "build_box", "dist_to_boundary", "l1_ball",
    "Potential", "dipole_gas", "quadratic", "validate",
]
