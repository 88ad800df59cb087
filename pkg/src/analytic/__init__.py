# Closed-form and finite-difference references
from .oned import DriftOneDSolution, OneDSolution, solve_drift_1d, solve_singular_1d

__all__ = ["DriftOneDSolution", "OneDSolution", "solve_drift_1d", "solve_singular_1d"]
