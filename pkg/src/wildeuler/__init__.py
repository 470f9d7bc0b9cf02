"""Convex-integration construction of wild weak solutions of incompressible Euler.

States ``z = (v, u, q)`` live in the bordered-matrix form ``U`` with
``div_y U = 0``; waves are built from skew potentials, localized, and added
generation by generation while staying in the interior of the convex hull of
the constraint set.
"""

from .algebra import StateError, StateTriple, from_matrix, to_matrix
from .diagnostics import DiagnosticReport, diagnose, residual_force, sample_grid
from .engine import ConstructionState, DomainSpec, EngineConfig, EngineError, perturbation_step, run
from .grid import GridSpec
from .waves import WaveSum, WaveTerm, localized_wave

__all__ = [
    "ConstructionState",
    "DiagnosticReport",
    "DomainSpec",
    "EngineConfig",
    "EngineError",
    "GridSpec",
    "StateError",
    "StateTriple",
    "WaveSum",
    "WaveTerm",
    "diagnose",
    "from_matrix",
    "localized_wave",
    "perturbation_step",
    "residual_force",
    "run",
    "sample_grid",
    "to_matrix",
]

__version__ = "0.1.0"
