"""Input validation shared by the solver, the estimator and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_X_y

from .exceptions import NonFiniteInput


def check_design(X, y):
    """Return float64 ``(X, y)`` with ``X`` 2-d, ``y`` 1-d and all entries finite."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 2 and y.ndim == 1 and not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NonFiniteInput("X and y must be finite")
    X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=False, y_numeric=True)
    return X, y


def check_covariance(Sigma, p: int) -> np.ndarray:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (p, p):
        raise ValueError(f"Sigma must have shape ({p}, {p}), got {Sigma.shape}")
    if not np.isfinite(Sigma).all():
        raise NonFiniteInput("Sigma must be finite")
    if not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(Sigma).max())):
        raise ValueError("Sigma must be symmetric")
    return 0.5 * (Sigma + Sigma.T)


def check_coords(coords, p: int) -> np.ndarray:
    """Zero-based coordinate indices; ``None`` means all of them."""
    if coords is None:
        return np.arange(p)
    coords = np.atleast_1d(np.asarray(coords, dtype=int))
    if coords.size and (coords.min() < 0 or coords.max() >= p):
        raise ValueError(f"coordinates must lie in [0, {p})")
    return coords
