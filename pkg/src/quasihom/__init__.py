"""Periodic homogenization of quasilinear monotone elliptic operators in 2D."""

from .bvp import BvpSpec, closed_form_effective, solve_homogenized, solve_multiscale
from .cell import (CorrectorTable, EffectiveTable, build_effective_table, eval_effective,
                   flux_corrector, solve_corrector)
from .coefficients import BUILTIN_MODELS, CoefficientModel, flux, get_model
from .errors import (DegenerateRegionError, InvalidArgumentError, NonConvergenceError,
                     NumericalBreakdownError, RangeError, ResolutionError)
from .expansion import ErrorReport, build_expansion, expansion_errors
from .harness import StudyConfig, fit_slope, run_rate_study
from .mesh import Mesh, build_mesh, gradient, mollify, norm
from .solver import SolveOptions, SolveReport, solve_monotone

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_MODELS", "BvpSpec", "CoefficientModel", "CorrectorTable", "DegenerateRegionError",
    "EffectiveTable", "ErrorReport", "InvalidArgumentError", "Mesh", "NonConvergenceError",
    "NumericalBreakdownError", "RangeError", "ResolutionError", "SolveOptions", "SolveReport",
    "StudyConfig", "build_effective_table", "build_expansion", "build_mesh",
    "closed_form_effective", "eval_effective", "expansion_errors", "fit_slope", "flux",
    "flux_corrector", "get_model", "gradient", "mollify", "norm", "run_rate_study",
    "solve_corrector", "solve_homogenized", "solve_monotone", "solve_multiscale",
]
