"""Triangle-algorithm and Krylov-moment solvers for ``Ax = b`` and its normal equation."""

__version__ = "0.1.0"

from .baselines import BaselineOptions, cg_solve, gmres_solve, ilu0
from .cta import (CtaOptions, f1_apply, ft_apply, ft_iterate, hybrid_solve,
                  minimal_poly_factor, normal_equation_iterate, pointwise_orbit)
from .linalg import Breakdown, DimensionError, KrylovCache, Mode, OperatorH, SparseMatrix
from .report import SolveReport, Verdict
from .triangle import ta_min_norm, ta_solve, ta_solve_psd

__all__ = [
    "BaselineOptions", "Breakdown", "CtaOptions", "DimensionError", "KrylovCache", "Mode",
    "OperatorH", "SolveReport", "SparseMatrix", "Verdict", "cg_solve", "f1_apply", "ft_apply",
    "ft_iterate", "gmres_solve", "hybrid_solve", "ilu0", "minimal_poly_factor",
    "normal_equation_iterate", "pointwise_orbit", "ta_min_norm", "ta_solve", "ta_solve_psd",
]
