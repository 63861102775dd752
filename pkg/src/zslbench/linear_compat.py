"""Bilinear compatibility models: DEVISE, ALE, SJE and ESZSL.

All four score an image/class pair with ``theta(x)^T W phi(y)``. The three
ranking methods are trained by per-sample subgradient descent on their
ranking losses; ESZSL has a closed-form solution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import DivergenceError, TrainedMethod, check_finite, predict  # noqa: F401
from .datamodel import DatasetBundle


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    epochs: int = 10
    seed: int = 0
    margin: float = 1.0  # Delta(y_n, y) for y != y_n; Delta(y_n, y_n) = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass(frozen=True)
class EszslConfig:
    gamma: float = 1.0
    lambda_: float = 1.0

    def __post_init__(self):
        if self.gamma < 0 or self.lambda_ < 0:
            raise ValueError("gamma and lambda_ must be non-negative")

    @property
    def beta(self) -> float:
        return self.gamma * self.lambda_


class BilinearModel(TrainedMethod):
    """``F(x, y) = x^T W phi(y)`` against a fixed class-embedding table."""

    def __init__(self, W, class_embeddings, name="bilinear"):
        self.W = np.asarray(W, dtype=np.float64)
        self.class_embeddings = np.asarray(class_embeddings, dtype=np.float64)
        self.name = name
        if self.W.shape[1] != self.class_embeddings.shape[1]:
            raise ValueError(f"W has {self.W.shape[1]} columns, embeddings have {self.class_embeddings.shape[1]}")

    def scores(self, X):
        return (np.asarray(X, dtype=np.float64) @ self.W) @ self.class_embeddings.T


def compatibility(W, x_embed, y_embed) -> float:
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x_embed, dtype=np.float64)
    y = np.asarray(y_embed, dtype=np.float64)
    if W.shape != (x.shape[0], y.shape[0]):
        raise ValueError(f"dimension mismatch: x {x.shape}, W {W.shape}, y {y.shape}")
    return float(x @ W @ y)


def ale_rank_weight(k: int) -> float:
    """Harmonic number ``1 + 1/2 + ... + 1/k``; 0 for k = 0."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return float(sum(1.0 / i for i in range(1, k + 1)))


# Each loss works on the score vector over training classes and the position
# of the true class. It returns the loss and a coefficient vector ``c`` with
# d loss / d W = outer(x, c @ Phi_train).

def _devise_terms(s, pos, margin):
    h = margin + s - s[pos]
    h[pos] = 0.0
    viol = h > 0
    coef = viol.astype(np.float64)
    coef[pos] = -coef.sum()
    return float(h[viol].sum()), coef


def _ale_terms(s, pos, margin):
    h = margin + s - s[pos]
    h[pos] = 0.0
    ranked = s + margin >= s[pos]
    ranked[pos] = False
    r = int(ranked.sum())
    if r == 0:
        return 0.0, np.zeros_like(s)
    weight = ale_rank_weight(r) / r
    viol = h > 0
    coef = weight * viol.astype(np.float64)
    coef[pos] = -coef.sum()
    return float(weight * h[viol].sum()), coef


def _sje_terms(s, pos, margin):
    v = margin + s
    v[pos] = s[pos]
    j = int(np.argmax(v))
    loss = v[j] - s[pos]
    coef = np.zeros_like(s)
    if loss <= 0:
        return 0.0, coef
    coef[j] += 1.0
    coef[pos] -= 1.0
    return float(loss), coef


_TERMS = {"devise": _devise_terms, "ale": _ale_terms, "sje": _sje_terms}


def _sample_setup(x_embed, label, class_embeddings, train_classes):
    train = np.asarray(sorted(int(c) for c in train_classes), dtype=np.int64)
    hit = np.flatnonzero(train == int(label))
    if hit.size == 0:
        raise ValueError(f"label {label} is not a training class")
    phi = np.asarray(class_embeddings, dtype=np.float64)[train]
    return np.asarray(x_embed, dtype=np.float64), phi, int(hit[0])


def _loss_and_grad(kind, W, x_embed, label, class_embeddings, train_classes, margin):
    x, phi, pos = _sample_setup(x_embed, label, class_embeddings, train_classes)
    s = (x @ np.asarray(W, dtype=np.float64)) @ phi.T
    loss, coef = _TERMS[kind](s, pos, margin)
    return loss, np.outer(x, coef @ phi)


def devise_loss(W, x_embed, label, class_embeddings, train_classes, margin=1.0) -> float:
    """Pairwise ranking hinge loss summed over every wrong training class."""
    return _loss_and_grad("devise", W, x_embed, label, class_embeddings, train_classes, margin)[0]


def ale_loss(W, x_embed, label, class_embeddings, train_classes, margin=1.0) -> float:
    """Rank-weighted hinge loss; the weight is ``l_r / r`` with ``r`` the
    number of wrong classes violating the margin (0 loss when ``r = 0``)."""
    return _loss_and_grad("ale", W, x_embed, label, class_embeddings, train_classes, margin)[0]


def sje_loss(W, x_embed, label, class_embeddings, train_classes, margin=1.0) -> float:
    """Hinge on the single most violating class (structured SVM style)."""
    return _loss_and_grad("sje", W, x_embed, label, class_embeddings, train_classes, margin)[0]


def loss_subgradient(kind, W, x_embed, label, class_embeddings, train_classes, margin=1.0):
    """Subgradient of the ``kind`` loss ('devise', 'ale' or 'sje') w.r.t. W."""
    return _loss_and_grad(kind, W, x_embed, label, class_embeddings, train_classes, margin)[1]


def _training_data(bundle: DatasetBundle):
    train = bundle.split.train_classes
    if train.size == 0:
        raise ValueError("training split is empty")
    idx = bundle.image_indices(train)
    if idx.size == 0:
        raise ValueError("no training images")
    pos_of = {int(c): i for i, c in enumerate(train)}
    pos = np.array([pos_of[int(c)] for c in bundle.labels[idx]], dtype=np.int64)
    return bundle.features[idx], pos, bundle.class_embeddings[train]


def sgd_order(n: int, epochs: int, seed: int):
    """Per-epoch sample orders from a counter-based (Philox) generator."""
    rng = np.random.Generator(np.random.Philox(seed))
    for _ in range(epochs):
        yield rng.permutation(n)


def train_sgd(method: str, bundle: DatasetBundle, cfg: SgdConfig) -> BilinearModel:
    """Train DEVISE, ALE or SJE from an all-zero W."""
    if method not in _TERMS:
        raise ValueError(f"unknown ranking method {method!r}")
    terms = _TERMS[method]
    X, pos, phi = _training_data(bundle)
    W = np.zeros((bundle.feat_dim, bundle.embed_dim))
    lr, margin = cfg.learning_rate, cfg.margin
    for epoch, order in enumerate(sgd_order(len(X), cfg.epochs, cfg.seed)):
        for n in order:
            x = X[n]
            s = (x @ W) @ phi.T
            if not np.all(np.isfinite(s)):
                raise DivergenceError(f"{method} epoch {epoch}: scores became non-finite; lower the learning rate")
            loss, coef = terms(s, pos[n], margin)
            if loss > 0:
                W -= lr * np.outer(x, coef @ phi)
        check_finite(f"{method} epoch {epoch}", W)
    return BilinearModel(W, bundle.class_embeddings, name=method)


# --- ESZSL -------------------------------------------------------------------

def eszsl_objective(V, X, S, Y, gamma, lambda_) -> float:
    """Square loss plus the ESZSL regulariser with beta = gamma * lambda.

    X is (N, d) features, S is (z, a) class embeddings, Y is (N, z) targets.
    """
    XV = X @ V
    VS = V @ S.T
    resid = XV @ S.T - Y
    return float(
        np.sum(resid ** 2)
        + gamma * np.sum(VS ** 2)
        + lambda_ * np.sum(XV ** 2)
        + gamma * lambda_ * np.sum(V ** 2)
    )


def eszsl_solve(X, S, Y, gamma, lambda_) -> np.ndarray:
    """Closed-form minimiser of :func:`eszsl_objective`.

    Setting the gradient to zero gives
    ``(X^T X + gamma I) V (S^T S + lambda I) = X^T Y S``.
    """
    X = np.asarray(X, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    A = X.T @ X + gamma * np.eye(X.shape[1])
    B = S.T @ S + lambda_ * np.eye(S.shape[1])
    for name, M in (("feature Gram matrix + gamma*I", A), ("embedding Gram matrix + lambda*I", B)):
        if np.linalg.cond(M) > 1e14:
            raise np.linalg.LinAlgError(
                f"ESZSL: {name} is singular; increase gamma/lambda_ or check data rank"
            )
    left = np.linalg.solve(A, X.T @ Y @ S)
    return np.linalg.solve(B.T, left.T).T


def train_eszsl(bundle: DatasetBundle, cfg: EszslConfig) -> BilinearModel:
    X, pos, S = _training_data(bundle)
    Y = np.zeros((len(X), S.shape[0]))
    Y[np.arange(len(X)), pos] = 1.0
    V = eszsl_solve(X, S, Y, cfg.gamma, cfg.lambda_)
    return BilinearModel(V, bundle.class_embeddings, name="eszsl")
