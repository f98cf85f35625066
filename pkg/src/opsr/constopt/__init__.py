from .bfgs import BFGSResult, bfgs_minimize, wolfe_line_search
from .fitting import (
    R2_THRESHOLD, Dataset, DegenerateTruth, FitResult, OptConfig, bound_expression,
    fit_constants, integer_exponent_sweep, r_squared, recovery_check, select_strategy,
)

__all__ = [
    "BFGSResult", "Dataset", "DegenerateTruth", "FitResult", "OptConfig", "R2_THRESHOLD",
    "bfgs_minimize", "bound_expression", "fit_constants", "integer_exponent_sweep",
    "r_squared", "recovery_check", "select_strategy", "wolfe_line_search",
]
