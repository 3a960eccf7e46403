"""Predictive distribution of a fitted sparse model at new inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import FitResult
from .errors import DataError
from .kernels import KernelSpec, gram


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float
    interval: tuple[float, float]


def _z(coverage: float) -> float:
    if not 0.0 < coverage < 1.0:
        raise ValueError(f"coverage must lie in (0, 1), got {coverage}")
    return float(norm.ppf(0.5 + 0.5 * coverage))


def basis_rows(fit: FitResult, train_X, spec: KernelSpec, X_star) -> np.ndarray:
    """Rows phi(x*) restricted to the relevance columns, shape (K, L)."""
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star[None, :]
    if X_star.ndim != 2:
        raise DataError("prediction inputs must be a matrix")
    if not np.all(np.isfinite(X_star)):
        raise DataError("prediction inputs have non-finite entries")
    idx = fit.relevance_indices
    if spec.is_identity:
        if X_star.shape[1] != fit.n_columns:
            raise DataError(
                f"expected {fit.n_columns} regressors per row, got {X_star.shape[1]}"
            )
        return X_star[:, idx]
    if train_X is None:
        raise DataError("kernel prediction needs the training inputs")
    train_X = np.asarray(train_X, dtype=float)
    if train_X.ndim == 1:
        train_X = train_X[:, None]
    if X_star.shape[1] != train_X.shape[1]:
        raise DataError(
            f"input dimension {X_star.shape[1]} does not match training dimension {train_X.shape[1]}"
        )
    if len(idx) == 0 or X_star.shape[0] == 0:
        return np.zeros((X_star.shape[0], len(idx)))
    return gram(spec, X_star, train_X[idx])


def predict_arrays(fit: FitResult, train_X, spec: KernelSpec, X_star, coverage: float = 0.95):
    """Vectorised form of :func:`predict_batch`: (mean, variance, lo, hi) arrays."""
    z = _z(coverage)
    B = basis_rows(fit, train_X, spec, X_star)
    mean = B @ fit.weights
    quad = np.einsum("ij,jk,ik->i", B, fit.Sigma, B)
    # Sigma is PSD; clip tiny negative round-off so the bound holds exactly
    var = fit.sigma2_hat + np.maximum(quad, 0.0)
    half = z * np.sqrt(var)
    return mean, var, mean - half, mean + half


def predict_one(fit: FitResult, train_X, spec: KernelSpec, x_star, coverage: float = 0.95) -> Prediction:
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim != 1:
        raise DataError("x_star must be a vector")
    return predict_batch(fit, train_X, spec, x_star[None, :], coverage)[0]


def predict_batch(fit: FitResult, train_X, spec: KernelSpec, X_star, coverage: float = 0.95) -> list[Prediction]:
    X_star = np.asarray(X_star, dtype=float)
    if X_star.size == 0:
        return []
    mean, var, lo, hi = predict_arrays(fit, train_X, spec, X_star, coverage)
    return [
        Prediction(float(m), float(v), (float(a), float(b)))
        for m, v, a, b in zip(mean, var, lo, hi)
    ]
