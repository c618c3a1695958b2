"""Random conductance models on Z^d: correctors, boundary smoothing, harmonic extensions and excess decay."""

from .correctors import CorrectorSet, compute_sigma, homogenize, sublinearity_scan
from .elliptic import EllipticProblem, SolveReport, SolverError, apply, harmonic_extension, solve
from .environment import (Environment, Topology, box, layered, load_environment, make_environment,
                          homogeneous, save_environment, simulate_walk, stream, torus)
from .excess import (cutoff, energy_identity_check, excess_decay_experiment, homogenization_error,
                     liouville_dimension)
from .extension import (ExtensionProblem, boundary_term, diagnostics, dirichlet_extend, lambda_bar,
                        neumann_extend, theta)
from .lattice import BoxGeometry, EdgeField, VertexField, avnorm, build_box
from .surface import SmoothingStack, SurfaceMesh, scott_zhang

# The submodules ``correctors`` and ``excess`` share their names with their main
# functions; the functions are reached as latticehom.correctors.correctors etc.
__version__ = "0.1.0"

__all__ = [
    "BoxGeometry", "CorrectorSet", "EdgeField", "EllipticProblem", "Environment", "ExtensionProblem",
    "SmoothingStack", "SolveReport", "SolverError", "SurfaceMesh", "Topology", "VertexField", "apply", "avnorm",
    "boundary_term", "box", "build_box", "compute_sigma", "cutoff", "diagnostics",
    "dirichlet_extend", "energy_identity_check", "excess_decay_experiment", "harmonic_extension",
    "homogenization_error", "homogenize", "homogeneous", "lambda_bar", "layered", "liouville_dimension",
    "load_environment", "make_environment", "neumann_extend", "save_environment", "scott_zhang",
    "simulate_walk", "solve", "stream", "sublinearity_scan", "theta", "torus",
]
