"""Sphericalization of unbounded metric measure spaces: conformal density transforms,
their discretization on graphs, and numerical checks of what they preserve."""

from .constants import StructureConstants
from .density import (FAIL, INCONCLUSIVE, PASS, DensityFn, DensityReport, Exponential, PowLog, Tabulated,
                      check_condition_A, check_condition_B, classify, h_and_inverse, tail_integral)
from .errors import (ConfigError, DegenerateError, DivergenceError, DomainError, PrereqError, ResourceError,
                     SkippedBall, SphericalizationError, UnreachableError)
from .space import BallQuery, SpaceModel, build_halfplane, graph_distance, read_graph, write_graph
from .sphere import SphereView, check_condition_C, d_rho, d_rho_infinity, sphericalize

__version__ = "0.1.0"

__all__ = [
    "StructureConstants", "FAIL", "INCONCLUSIVE", "PASS", "DensityFn", "DensityReport", "Exponential", "PowLog",
    "Tabulated", "check_condition_A", "check_condition_B", "classify", "h_and_inverse", "tail_integral",
    "ConfigError", "DegenerateError", "DivergenceError", "DomainError", "PrereqError", "ResourceError",
    "SkippedBall", "SphericalizationError", "UnreachableError", "BallQuery", "SpaceModel", "build_halfplane",
    "graph_distance", "read_graph", "write_graph", "SphereView", "check_condition_C", "d_rho", "d_rho_infinity",
    "sphericalize",
]
