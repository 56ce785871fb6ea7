"""Estimators and statistical checks over field ensembles."""
from .counting import AverageScanner, tile_decoupling, tiling, truncated_count
from .coupling import boundary_field, coupling_experiment
from .extremes import high_points, max_scaling, max_statistics, tail_curve
from .functionals import (annihilation_error, bl_check, clt_check, gaussian_covariance, increment_gaussianity,
                          mgf_check, separation_scale)
from .stats import SCHEMA_VERSION, Check, Estimate, ExperimentReport, bc_interval, bootstrap
from .stiffness import StiffnessEstimate, estimate_stiffness

__all__ = [
    "AverageScanner", "Check", "Estimate", "ExperimentReport", "SCHEMA_VERSION", "StiffnessEstimate",
    "annihilation_error", "bc_interval", "bl_check", "bootstrap", "boundary_field", "clt_check",
    "coupling_experiment", "estimate_stiffness", "gaussian_covariance", "high_points", "increment_gaussianity",
    "max_scaling", "max_statistics", "mgf_check", "separation_scale", "tail_curve", "tile_decoupling", "tiling",
    "truncated_count",
]
