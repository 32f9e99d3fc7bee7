"""Finite-difference solver for the gradient flow of the regularised ROF model."""

from .energy import EnergyParams, E_h, J_h, characterization_gap, subgrad_Jh
from .grid import GridFunction, VectorField, norm
from .solver import (
    PeronaMalikConfig,
    SolverConfig,
    Trajectory,
    evolve,
    fixed_point_step,
    perona_malik_evolve,
)

__version__ = "0.1.0"
