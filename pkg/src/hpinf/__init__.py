"""Influence estimation with the generalized Fisher information matrix and Schulz iterations."""
from .estimators import (ESTIMATORS, GradientDump, InfluenceReport, rank_examples, run_estimator,
                         score_datainf, score_exact, score_hyperinf, score_lissa, score_tracin)
from .fisher import build_fim, build_gfim, damping_factor, gfim_inverse_hvp
from .hyperpower import (ConvergenceTrace, IterationConfig, hyperpower_inverse, lissa_hvp,
                         schulz_inverse)
from .linalg import cg_solve, gaussian_inverse, gmres_solve

__version__ = "0.1.0"

__all__ = [
    "ESTIMATORS", "GradientDump", "InfluenceReport", "rank_examples", "run_estimator",
    "score_datainf", "score_exact", "score_hyperinf", "score_lissa", "score_tracin",
    "build_fim", "build_gfim", "damping_factor", "gfim_inverse_hvp",
    "ConvergenceTrace", "IterationConfig", "hyperpower_inverse", "lissa_hvp", "schulz_inverse",
    "cg_solve", "gaussian_inverse", "gmres_solve",
]
