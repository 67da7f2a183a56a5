"""Singular 1-Laplacian Dirichlet problems via p-Laplacian continuation, with certificates."""
from .certificate import CertificateReport, InvalidCandidate, TestFamily, Thresholds, certify
from .continuation import ContinuationResult, Schedule, limit_estimate, run_schedule
from .grid import Grid, build_grid, divergence, gradient, pairing, total_variation
from .oracle import ClosedFormPair, constant_solution, example1_pairs, example2_pairs, sample_pair
from .psolver import ProblemSpec, PSolution, PSolveConfig, solve_p_problem

__all__ = [
    "CertificateReport", "ClosedFormPair", "ContinuationResult", "Grid", "InvalidCandidate",
    "ProblemSpec", "PSolution", "PSolveConfig", "Schedule", "TestFamily", "Thresholds",
    "build_grid", "certify", "constant_solution", "divergence", "example1_pairs",
    "example2_pairs", "gradient", "limit_estimate", "pairing", "run_schedule", "sample_pair",
    "solve_p_problem", "total_variation",
]
