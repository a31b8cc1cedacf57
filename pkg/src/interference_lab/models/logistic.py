"""Ridge-penalized logistic and multinomial logistic regression fit by damped Newton steps."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import expit, log_softmax, softmax

from interference_lab.errors import InvalidArgumentError, NumericalError


def _design(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidArgumentError("features must be a 2-D array")
    return np.column_stack([np.ones(len(X)), X])


class LogisticRegression:
    """Binary logistic regression maximizing sum log-lik - reg/2 * ||w||^2 (intercept unpenalized)."""

    def __init__(self, reg: float = 1e-6, tol: float = 1e-8, max_iter: int = 500):
        if reg < 0:
            raise InvalidArgumentError("ridge penalty must be >= 0")
        self.reg = reg
        self.tol = tol
        self.max_iter = max_iter
        self.coef_: np.ndarray | None = None
        self.diagnostics: dict = {}

    def objective(self, w, Z, y):
        eta = Z @ w
        ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        return ll - 0.5 * self.reg * float(w[1:] @ w[1:])

    def gradient(self, w, Z, y):
        g = Z.T @ (y - expit(Z @ w))
        g[1:] -= self.reg * w[1:]
        return g

    def fit(self, X, y, init: np.ndarray | None = None) -> "LogisticRegression":
        Z = _design(X)
        y = np.asarray(y, dtype=float)
        if len(np.unique(y)) < 2:
            raise InvalidArgumentError("logistic fit needs both labels present")
        d = Z.shape[1]
        w = np.zeros(d) if init is None else np.asarray(init, dtype=float).copy()
        if init is None:
            rate = np.clip(y.mean(), 1e-6, 1 - 1e-6)
            w[0] = np.log(rate / (1 - rate))
        penalty = np.full(d, self.reg)
        penalty[0] = 0.0
        obj = self.objective(w, Z, y)
        gnorm = np.inf
        it = 0
        for it in range(1, self.max_iter + 1):
            mu = expit(Z @ w)
            g = Z.T @ (y - mu) - penalty * w
            gnorm = float(np.linalg.norm(g))
            if gnorm <= self.tol:
                it -= 1
                break
            H = (Z * (mu * (1 - mu))[:, None]).T @ Z + np.diag(penalty)
            try:
                step = np.linalg.solve(H + 1e-12 * np.eye(d), g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, g, rcond=None)[0]
            t = 1.0
            while t > 1e-10:
                cand = w + t * step
                cobj = self.objective(cand, Z, y)
                if cobj >= obj - 1e-12 * abs(obj):
                    break
                t *= 0.5
            if t <= 1e-10:
                break
            w, prev, obj = cand, obj, cobj
            if abs(obj - prev) <= 1e-15 * max(1.0, abs(obj)) and gnorm < 1e-6 * len(y):
                break
        self.coef_ = w
        loss = _binary_log_loss(y, expit(Z @ w))
        # a saturated unpenalized fit only happens under (quasi-)separation
        saturated = self.reg == 0 and loss < 1e-6
        diverged = bool(np.max(np.abs(w)) > 30.0) or gnorm > 1e-4 * max(1, len(y)) or saturated
        self.diagnostics = {
            "iterations": it,
            "grad_norm": gnorm,
            "log_loss": loss,
            "diverging": diverged,
        }
        if diverged:
            warnings.warn(
                "logistic weights are diverging (possible perfect separation); "
                "use a positive ridge penalty",
                RuntimeWarning,
                stacklevel=2,
            )
        return self

    def decision_function(self, X) -> np.ndarray:
        if self.coef_ is None:
            raise NumericalError("model is not fitted")
        return _design(X) @ self.coef_

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> dict:
        return {"reg": self.reg, "coef": self.coef_.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "LogisticRegression":
        model = cls(reg=doc["reg"])
        model.coef_ = np.asarray(doc["coef"], dtype=float)
        return model


class MultinomialLogisticRegression:
    """Softmax regression with class 0 as the reference (its weights are fixed at zero)."""

    def __init__(self, reg: float = 1e-6, tol: float = 1e-8, max_iter: int = 500):
        self.reg = reg
        self.tol = tol
        self.max_iter = max_iter
        self.coef_: np.ndarray | None = None  # (K, d), row 0 is zero
        self.diagnostics: dict = {}

    def _scores(self, W, Z):
        return np.column_stack([np.zeros(len(Z)), Z @ W.T])

    def objective(self, W, Z, Y):
        ll = float(np.sum(Y * log_softmax(self._scores(W, Z), axis=1)))
        return ll - 0.5 * self.reg * float(np.sum(W[:, 1:] ** 2))

    def fit(self, X, labels, n_classes: int) -> "MultinomialLogisticRegression":
        Z = _design(X)
        labels = np.asarray(labels, dtype=int)
        n, d = Z.shape
        K = n_classes
        Y = np.zeros((n, K))
        Y[np.arange(n), labels] = 1.0
        counts = Y.sum(axis=0)
        if np.any(counts == 0):
            raise InvalidArgumentError(f"classes {np.flatnonzero(counts == 0).tolist()} never observed")
        W = np.zeros((K - 1, d))
        W[:, 0] = np.log(counts[1:] / counts[0])
        pen = np.tile(np.r_[0.0, np.full(d - 1, self.reg)], K - 1)
        obj = self.objective(W, Z, Y)
        gnorm = np.inf
        it = 0
        for it in range(1, self.max_iter + 1):
            P = softmax(self._scores(W, Z), axis=1)[:, 1:]
            G = (Y[:, 1:] - P).T @ Z
            g = G.ravel() - pen * W.ravel()
            gnorm = float(np.linalg.norm(g))
            if gnorm <= self.tol:
                it -= 1
                break
            H = np.zeros(((K - 1) * d, (K - 1) * d))
            for a in range(K - 1):
                for b in range(a, K - 1):
                    wts = P[:, a] * ((a == b) - P[:, b])
                    block = (Z * wts[:, None]).T @ Z
                    H[a * d : (a + 1) * d, b * d : (b + 1) * d] = block
                    H[b * d : (b + 1) * d, a * d : (a + 1) * d] = block
            H += np.diag(pen) + 1e-12 * np.eye(len(pen))
            step = np.linalg.solve(H, g).reshape(K - 1, d)
            t = 1.0
            while t > 1e-10:
                cand = W + t * step
                cobj = self.objective(cand, Z, Y)
                if cobj >= obj - 1e-12 * abs(obj):
                    break
                t *= 0.5
            if t <= 1e-10:
                break
            W, prev, obj = cand, obj, cobj
            if abs(obj - prev) <= 1e-15 * max(1.0, abs(obj)) and gnorm < 1e-6 * n:
                break
        self.coef_ = np.vstack([np.zeros(d), W])
        P = softmax(self._scores(W, Z), axis=1)
        self.diagnostics = {
            "iterations": it,
            "grad_norm": gnorm,
            "log_loss": float(-np.mean(np.log(np.clip(P[np.arange(n), labels], 1e-300, None)))),
        }
        return self

    def predict_proba(self, X) -> np.ndarray:
        if self.coef_ is None:
            raise NumericalError("model is not fitted")
        Z = _design(X)
        return softmax(Z @ self.coef_.T, axis=1)

    def to_dict(self) -> dict:
        return {"reg": self.reg, "coef": self.coef_.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "MultinomialLogisticRegression":
        model = cls(reg=doc["reg"])
        model.coef_ = np.asarray(doc["coef"], dtype=float)
        return model


def _binary_log_loss(y, p) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))
