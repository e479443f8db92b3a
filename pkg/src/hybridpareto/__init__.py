"""Efficient points of convex polynomial multi-objective problems via hybrid scalarization and moment relaxations."""

from .certify import SosCertificate, extract_atoms, rank_profile, recover_certificate
from .driver import (
    EfficientPoint,
    SamplingStalled,
    SweepConfig,
    existence_probe,
    pareto_filter,
    reverify_efficiency,
    run_sweep,
    sample_feasible_z,
    solve_hybrid,
)
from .moments import MomentVector, dirac_moments, localization_matrix, moment_matrix
from .poly import MooProblem, Polynomial
from .relax import Family, HybridProblem, build_p, build_q
from .sdp import SdpInstance, Status, solve

__version__ = "0.1.0"
