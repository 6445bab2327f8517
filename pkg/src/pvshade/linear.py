"""Ordinary least squares, ridge and lasso regression.

Ridge and lasso minimise the unnormalised objectives

    sum_i (y_i - b0 - x_i . b)^2 + lam * sum_j b_j^2      (ridge)
    sum_i (y_i - b0 - x_i . b)^2 + lam * sum_j |b_j|      (lasso)

with the intercept b0 never penalised.  Because there is no 1/n factor, the
effect of a given ``lam`` shrinks as the number of rows grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, SingularMatrixError, ValidationError

PENALTIES = ("none", "l2", "l1")
_MODEL_TYPE = {"none": "linear", "l2": "ridge", "l1": "lasso"}


@dataclass(frozen=True, eq=False)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    penalty: str = "none"
    lam: float = 0.0
    feature_names: Optional[list] = None
    iterations: Optional[int] = None

    def __post_init__(self):
        if self.penalty not in PENALTIES:
            raise ValidationError(f"penalty must be one of {PENALTIES}")
        if self.lam < 0:
            raise ValidationError("lambda must be >= 0")

    @property
    def model_type(self) -> str:
        return _MODEL_TYPE[self.penalty]

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def to_dict(self) -> dict:
        return {
            "model_type": self.model_type,
            "feature_names": self.feature_names,
            "intercept": float(self.intercept),
            "coefficients": [float(c) for c in self.coefficients],
            "penalty": self.penalty,
            "lambda": float(self.lam),
        }

    @classmethod
    def from_dict(cls, d) -> "LinearModel":
        return cls(float(d["intercept"]), np.asarray(d["coefficients"], dtype=float),
                   d["penalty"], float(d["lambda"]), d.get("feature_names"))


def _design(features, targets):
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"incompatible shapes: features {X.shape}, targets {y.shape}")
    return X, y


def fit_ols(features, targets, feature_names: Optional[Sequence[str]] = None) -> LinearModel:
    """Least squares with an intercept, solved by column-pivoted QR.

    Raises:
        SingularMatrixError: the design (with its intercept column) is rank
            deficient; a ridge fit with a positive penalty still works.
    """
    X, y = _design(features, targets)
    n, p = X.shape
    if n <= p:
        raise SingularMatrixError(f"need more rows than features (n={n}, p={p}); use ridge")
    A = np.column_stack([np.ones(n), X])
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < p + 1:
        raise SingularMatrixError(
            f"design matrix is rank deficient (rank {rank} < {p + 1}); use ridge with lambda > 0"
        )
    beta = np.empty(p + 1)
    beta[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    return LinearModel(float(beta[0]), beta[1:], "none", 0.0,
                       list(feature_names) if feature_names is not None else None)


def fit_ridge(features, targets, lam: float = 1.0,
              feature_names: Optional[Sequence[str]] = None) -> LinearModel:
    """Closed-form ridge on centred data; ``lam = 0`` defers to :func:`fit_ols`."""
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    X, y = _design(features, targets)
    names = list(feature_names) if feature_names is not None else None
    if lam == 0:
        ols = fit_ols(X, y)
        return LinearModel(ols.intercept, ols.coefficients, "l2", 0.0, names)
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc
    gram[np.diag_indices_from(gram)] += lam
    beta = scipy.linalg.solve(gram, Xc.T @ (y - y_mean), assume_a="pos")
    return LinearModel(float(y_mean - x_mean @ beta), beta, "l2", float(lam), names)


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def fit_lasso(features, targets, lam: float = 1.0, tol: float = 1e-7, max_iter: int = 10_000,
              feature_names: Optional[Sequence[str]] = None) -> LinearModel:
    """Cyclic coordinate descent with soft-thresholding.

    Features are expected to be standardised by the caller so the penalty
    treats them evenly.  Updates run on the centred Gram matrix; each
    coordinate step is b_j = S(rho_j, lam/2) / ||x_j||^2 where rho_j is the
    correlation of x_j with the partial residual.  Stops once a full sweep
    moves no coefficient by ``tol`` or more.

    Raises:
        ConvergenceError: ``max_iter`` sweeps without convergence; the last
            iterate is attached.
    """
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    X, y = _design(features, targets)
    names = list(feature_names) if feature_names is not None else None
    p = X.shape[1]
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc
    xty = Xc.T @ (y - y_mean)
    col_sq = np.diag(gram).copy()
    beta = np.zeros(p)
    half = 0.5 * lam
    for sweep in range(1, max_iter + 1):
        max_change = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            rho = xty[j] - gram[j] @ beta + col_sq[j] * beta[j]
            new = float(np.sign(rho) * max(abs(rho) - half, 0.0)) / col_sq[j]
            change = abs(new - beta[j])
            if change > max_change:
                max_change = change
            beta[j] = new
        if max_change < tol:
            return LinearModel(float(y_mean - x_mean @ beta), beta, "l1", float(lam), names, sweep)
    raise ConvergenceError(
        f"lasso did not converge in {max_iter} sweeps (last max change {max_change:.3g})",
        coefficients=beta.copy(), intercept=float(y_mean - x_mean @ beta),
    )


def predict(model: LinearModel, features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != len(model.coefficients):
        raise ValidationError(
            f"model has {len(model.coefficients)} coefficients, got {X.shape[1]} features"
        )
    return model.intercept + X @ model.coefficients
