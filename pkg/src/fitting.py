"""
Least-Squares Fitting Module

Shared linear least-squares helpers behind the fuel-curve, battery-current and
end-of-life surrogate fits.

Author: noomesk
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import lsq_linear


class FitError(Exception):
    """Custom exception for surrogate fitting errors."""
    pass


def r_squared(observed: np.ndarray, predicted: np.ndarray) -> float:
    """Coefficient of determination; 1.0 for a constant, exactly matched target."""
    observed = np.asarray(observed, dtype=float)
    residual = float(np.sum((observed - predicted) ** 2))
    total = float(np.sum((observed - observed.mean()) ** 2))
    if total == 0.0:
        return 1.0 if residual == 0.0 else 0.0
    return 1.0 - residual / total


def linear_least_squares(design: np.ndarray, target: np.ndarray,
                         lower: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, float]:
    """Solve ``min ||design @ coef - target||`` with optional lower bounds.

    The unconstrained solution is returned when it already respects the
    bounds; otherwise the bounded problem is solved exactly (BVLS).

    Args:
        design (np.ndarray): Regressor matrix, one column per coefficient
        target (np.ndarray): Observations
        lower (Sequence[float], optional): Per-coefficient lower bounds
            (``-inf`` for free coefficients)

    Returns:
        Tuple[np.ndarray, float]: Coefficients and R² of the fit

    Raises:
        FitError: If there are fewer samples than coefficients or the
            regressors are rank deficient
    """
    design = np.asarray(design, dtype=float)
    target = np.asarray(target, dtype=float)
    n_samples, n_coef = design.shape
    if n_samples < n_coef:
        raise FitError(f"Need at least {n_coef} samples, got {n_samples}")
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(target))):
        raise FitError("Fit samples contain non-finite values")
    if np.linalg.matrix_rank(design) < n_coef:
        raise FitError("Fit samples are degenerate (rank-deficient regressors)")

    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    if lower is not None:
        lower = np.asarray(lower, dtype=float)
        if np.any(coef < lower):
            result = lsq_linear(design, target, bounds=(lower, np.full(n_coef, np.inf)), method="bvls")
            if not result.success:
                raise FitError(f"Bounded refit failed: {result.message}")
            coef = np.maximum(result.x, lower)

    return coef, r_squared(target, design @ coef)
