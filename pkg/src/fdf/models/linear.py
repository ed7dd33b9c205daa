"""Penalised linear regression, logistic regression and the log-linear gravity model."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ..errors import (
    CollinearDesign,
    FdfWarning,
    InsufficientRows,
    NotConverged,
    Separable,
    SingularSystem,
)


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray
    penalty: str = "none"
    lam: float = 0.0
    n_iter: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X @ self.coef

    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coef))


def _as_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("missing values in design")
    return X, y


def fit_ridge(X, y, lam: float) -> LinearModel:
    """Minimise ``||y - b0 - X b||^2 + lam ||b||^2`` with ``b0`` unpenalised."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X, y = _as_xy(X, y)
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc, yc = X - x_mean, y - y_mean
    p = X.shape[1]
    if p == 0:
        return LinearModel(float(y_mean), np.zeros(0), "ridge", lam)
    if lam == 0 and np.linalg.matrix_rank(Xc) < p:
        raise SingularSystem("rank-deficient design with lam = 0")
    A = Xc.T @ Xc + lam * np.eye(p)
    try:
        beta = linalg.cho_solve(linalg.cho_factor(A), Xc.T @ yc)
    except linalg.LinAlgError:
        raise SingularSystem("normal equations are not positive definite") from None
    return LinearModel(float(y_mean - x_mean @ beta), beta, "ridge", lam)


def soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return float(z - gamma)
    if z < -gamma:
        return float(z + gamma)
    return 0.0


def lasso_objective(X, y, intercept, coef, lam) -> float:
    """``(1/2n) ||y - b0 - X b||^2 + lam ||b||_1``."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(y, dtype=float) - intercept - X @ coef
    return float(r @ r / (2 * len(r)) + lam * np.abs(coef).sum())


def fit_lasso(X, y, lam: float, tol: float = 1e-8, max_iter: int = 10_000) -> LinearModel:
    """Cyclic coordinate descent on centred data.

    Stops when the largest coefficient change in a sweep drops below ``tol``.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X, y = _as_xy(X, y)
    n, p = X.shape
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc, yc = X - x_mean, y - y_mean
    sd = Xc.std(axis=0)
    live = sd > 0
    if live.any() and (np.abs(x_mean[live]).max() > 1e-6 or np.abs(sd[live] - 1).max() > 1e-6):
        warnings.warn("lasso features are not standardised; lam is scale dependent", FdfWarning,
                      stacklevel=2)

    # covariance updates: each coordinate step costs O(p) instead of O(n)
    G = Xc.T @ Xc / n
    c = Xc.T @ yc / n
    col_sq = np.diag(G).copy()
    beta = np.zeros(p)
    everything = [j for j in range(p) if col_sq[j] > 0]

    def sweep(idx):
        change = 0.0
        for j in idx:
            old = beta[j]
            rho = c[j] - G[j] @ beta + col_sq[j] * old
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                beta[j] = new
                change = max(change, abs(new - old))
        return change

    it, delta = 0, 0.0
    while it < max_iter:
        it += 1
        delta = sweep(everything)
        if delta < tol:
            return LinearModel(float(y_mean - x_mean @ beta), beta, "lasso", lam, it)
        # iterate on the active set until it settles, then re-check all coordinates
        active = [j for j in everything if beta[j] != 0]
        while it < max_iter:
            it += 1
            if sweep(active) < tol:
                break
    raise NotConverged(max_iter, delta)


# -- logistic -------------------------------------------------------------------

@dataclass(frozen=True)
class LogisticModel:
    alpha: float
    beta: np.ndarray
    l2: float = 0.0
    n_iter: int = 0

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return self.alpha + X @ self.beta

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.linear_predictor(X))

    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.beta))


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


def predict_proba(model: LogisticModel, x) -> np.ndarray:
    return model.predict_proba(x)


def _augment(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


def logistic_objective(params, X, y, l2: float = 0.0) -> float:
    """Penalised log-likelihood; ``params = [alpha, *beta]``."""
    Xa = _augment(X)
    z = Xa @ params
    ll = float(np.sum(y * z - np.logaddexp(0.0, z)))
    return ll - 0.5 * l2 * float(params[1:] @ params[1:])


def logistic_gradient(params, X, y, l2: float = 0.0) -> np.ndarray:
    Xa = _augment(X)
    g = Xa.T @ (np.asarray(y, dtype=float) - sigmoid(Xa @ params))
    g[1:] -= l2 * params[1:]
    return g


def fit_logistic(X, y, l2: float = 0.0, tol: float = 1e-8, max_iter: int = 200) -> LogisticModel:
    """Damped Newton ascent on the penalised log-likelihood."""
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("y must be binary 0/1")
    if l2 == 0 and (y.min() == y.max()):
        raise Separable("only one class present; the likelihood has no maximum")
    Xa = _augment(X)
    pen = np.full(Xa.shape[1], l2)
    pen[0] = 0.0
    params = np.zeros(Xa.shape[1])
    obj = logistic_objective(params, X, y, l2)
    sign = 2 * y - 1
    for it in range(1, max_iter + 1):
        if l2 == 0 and (np.linalg.norm(params[1:]) > 1e6 or np.all(sign * (Xa @ params) > 0)):
            # every row strictly on its own side: scaling params up always helps
            raise Separable("classes are linearly separable; the likelihood is unbounded")
        g = logistic_gradient(params, X, y, l2)
        if np.abs(g).max() < tol:
            return LogisticModel(float(params[0]), params[1:].copy(), l2, it)
        p = sigmoid(Xa @ params)
        H = (Xa * (p * (1 - p))[:, None]).T @ Xa + np.diag(pen)
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            trial = params + t * step
            trial_obj = logistic_objective(trial, X, y, l2)
            if trial_obj >= obj or t < 1e-10:
                break
            t *= 0.5
        params, obj = trial, trial_obj
    raise NotConverged(max_iter, float(np.abs(logistic_gradient(params, X, y, l2)).max()))


# -- gravity --------------------------------------------------------------------

@dataclass(frozen=True)
class GravityModel:
    """``a_ij = exp(alpha) * X_i**b1 * X_j**b2 / d_ij**b3``."""

    alpha: float
    b1: float
    b2: float
    b3: float
    dropped: int = field(default=0, compare=False)

    def predict(self, x_origin, x_dest, distance) -> np.ndarray:
        x_origin, x_dest, distance = (np.asarray(v, dtype=float) for v in (x_origin, x_dest, distance))
        return np.exp(self.alpha) * x_origin ** self.b1 * x_dest ** self.b2 / distance ** self.b3

    def n_nonzero(self) -> int:
        return int(np.count_nonzero([self.b1, self.b2, self.b3]))


def predict_gravity(model: GravityModel, x_origin, x_dest, distance):
    return model.predict(x_origin, x_dest, distance)


def fit_gravity(flows, x_origin, x_dest, distance) -> GravityModel:
    """OLS on ``log a = alpha + b1 log X_i + b2 log X_j - b3 log d``."""
    a, xi, xj, d = (np.asarray(v, dtype=float).ravel() for v in (flows, x_origin, x_dest, distance))
    if not (a.size == xi.size == xj.size == d.size):
        raise ValueError("gravity inputs must have equal length")
    ok = (a > 0) & (xi > 0) & (xj > 0) & (d > 0)
    dropped = int((~ok).sum())
    if dropped:
        warnings.warn(f"gravity fit dropped {dropped} rows with non-positive values", FdfWarning,
                      stacklevel=2)
    if ok.sum() < 4:
        raise InsufficientRows(f"gravity fit needs at least 4 positive rows, got {int(ok.sum())}")
    D = np.column_stack([np.ones(ok.sum()), np.log(xi[ok]), np.log(xj[ok]), -np.log(d[ok])])
    if np.linalg.matrix_rank(D) < 4:
        raise CollinearDesign("gravity design is rank deficient")
    coef = np.linalg.lstsq(D, np.log(a[ok]), rcond=None)[0]
    return GravityModel(*(float(c) for c in coef), dropped=dropped)
