"""Residual-plot diagnostics with a learned distance from the null model."""

from .errors import ResdiagError
from .regression import RegressionData, breusch_pagan_test, fit_ols, generate_null_residuals, reset_test

__version__ = "0.1.0"

__all__ = [
    "RegressionData",
    "ResdiagError",
    "breusch_pagan_test",
    "fit_ols",
    "generate_null_residuals",
    "reset_test",
]
