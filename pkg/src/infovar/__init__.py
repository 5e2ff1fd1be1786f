"""Grid-based solvers and checks for Gaussian extremality in information inequalities."""

from .density_core import GridDensity, GridSpec, make_density, moments
from .problems import MomentConstraints, MultiplierSet, ProblemSpec, SolveReport, WiretapReport

__version__ = "0.1.0"

__all__ = [
    "GridDensity",
    "GridSpec",
    "MomentConstraints",
    "MultiplierSet",
    "ProblemSpec",
    "SolveReport",
    "WiretapReport",
    "make_density",
    "moments",
]
