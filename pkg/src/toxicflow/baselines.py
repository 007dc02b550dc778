"""Benchmark models: frozen logistic regression and a running toxic fraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .nnet import sigmoid, softplus


@dataclass(frozen=True, eq=False)
class LogRModel:
    """Weights with the intercept stored last."""

    w: np.ndarray
    converged: bool
    nll: float

    def logit(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return X @ self.w[:-1] + self.w[-1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.logit(X))


def logreg_objective(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean NLL plus ``l2/2 * |weights|^2`` (intercept unpenalized), and gradient."""
    n = len(y)
    f = X @ w[:-1] + w[-1]
    loss = np.sum(softplus(f) - y * f) / n + 0.5 * l2 * (w[:-1] @ w[:-1])
    r = (sigmoid(f) - y) / n
    grad = np.empty_like(w)
    grad[:-1] = X.T @ r + l2 * w[:-1]
    grad[-1] = r.sum()
    return loss, grad


def fit_logreg(X: np.ndarray, y: np.ndarray, l2: float = 1e-6, max_iter: int = 1000,
               gtol: float = 1e-6) -> LogRModel:
    """Ridge-penalized logistic regression by L-BFGS.

    Non-convergence is reported through ``converged`` rather than raised.
    A single-class sample still fits (the intercept runs towards the
    boundary until the iteration cap or the ridge stops it).
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    if len(y) == 0:
        raise ValueError("empty training set")
    w0 = np.zeros(X.shape[1] + 1)
    res = minimize(logreg_objective, w0, args=(X, y, l2), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": gtol * 1e-3, "ftol": 1e-15})
    _, g = logreg_objective(res.x, X, y, l2)
    return LogRModel(res.x, bool(np.max(np.abs(g)) < gtol), float(res.fun))


@dataclass(frozen=True)
class MleState:
    success: int = 0
    total: int = 0

    def __post_init__(self):
        if not 0 <= self.success <= self.total:
            raise ValueError("need 0 <= success <= total")


def mle_update(state: MleState, y: int) -> MleState:
    if y not in (0, 1):
        raise ValueError("label must be 0 or 1")
    return MleState(state.success + int(y), state.total + 1)


def mle_predict(state: MleState) -> float:
    """Observed toxic fraction, or 0.5 before any observation."""
    return state.success / state.total if state.total else 0.5
