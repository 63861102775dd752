"""L2-regularised logistic models fitted with L-BFGS.

Objective: mean log loss + ``reg / 2 * ||w||^2``. Biases are not penalised.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_softmax, logsumexp, softmax


def fit_binary(X, t, reg, maxiter=500):
    """Return ``(w, b)`` for targets ``t`` in {0, 1}."""
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n, d = X.shape

    def fun(p):
        w, b = p[:d], p[d]
        z = X @ w + b
        # log(1 + e^z) - t z, computed stably
        loss = np.mean(np.logaddexp(0.0, z) - t * z) + 0.5 * reg * (w @ w)
        g = (expit(z) - t) / n
        return loss, np.concatenate([X.T @ g + reg * w, [g.sum()]])

    res = minimize(fun, np.zeros(d + 1), jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
    return res.x[:d], float(res.x[d])


def fit_multinomial(X, y, n_classes, reg, maxiter=500):
    """Return ``(W, b)`` with W of shape (d, n_classes) for labels in [0, n_classes)."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), y] = 1.0

    def fun(p):
        W = p[: d * n_classes].reshape(d, n_classes)
        b = p[d * n_classes:]
        Z = X @ W + b
        loss = np.mean(logsumexp(Z, axis=1) - (Z * Y).sum(1)) + 0.5 * reg * np.sum(W * W)
        G = (softmax(Z, axis=1) - Y) / n
        return loss, np.concatenate([(X.T @ G + reg * W).ravel(), G.sum(0)])

    res = minimize(fun, np.zeros(d * n_classes + n_classes), jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter})
    return res.x[: d * n_classes].reshape(d, n_classes), res.x[d * n_classes:]


def multinomial_proba(X, W, b):
    return np.exp(log_softmax(np.asarray(X, dtype=np.float64) @ W + b, axis=1))
