"""Penalised obstacle problems with steep potential wells and critical growth.

Modules: ``domain`` (grid, quadrature), ``model`` (V, phi, f and its
truncation), ``energy`` (functional, residual, penalty), ``solver``
(mountain pass, Newton, geometry, Sobolev estimate), ``continuation``
(eps and lam sweeps, VI checks), ``cli``.
"""
from .domain import GridSpec
from .energy import ProblemSpec
from .model import ExpCritical, ObstacleSpec, PotentialSpec, PowerCritical
from .solver import MountainPassResult, SolverConfig, mountain_pass

__all__ = [
    "ExpCritical",
    "GridSpec",
    "MountainPassResult",
    "ObstacleSpec",
    "PotentialSpec",
    "PowerCritical",
    "ProblemSpec",
    "SolverConfig",
    "mountain_pass",
]
__version__ = "0.1.0"
