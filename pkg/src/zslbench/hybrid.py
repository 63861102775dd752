"""Hybrid methods built from mixtures of seen classes: CONSE, SSE and SYNC."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.special import log_softmax

from .base import TrainedMethod, predict
from ._logistic import fit_multinomial, multinomial_proba
from .datamodel import DatasetBundle


class ConvergenceWarning(UserWarning):
    pass


class SeenClassifier:
    """Multinomial logistic classifier over the training classes."""

    def __init__(self, W, b, classes):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.classes = np.asarray(classes, dtype=np.int64)

    def proba(self, X) -> np.ndarray:
        """Rows are distributions over ``self.classes``."""
        return multinomial_proba(np.atleast_2d(X), self.W, self.b)


def train_seen_classifier(bundle: DatasetBundle, reg: float = 1e-3) -> SeenClassifier:
    if reg <= 0:
        raise ValueError("reg must be positive")
    classes = bundle.split.train_classes
    if classes.size == 0:
        raise ValueError("training split is empty")
    idx = bundle.image_indices(classes)
    counts = np.array([(bundle.labels[idx] == c).sum() for c in classes])
    if np.any(counts == 0):
        raise ValueError(f"training classes {classes[counts == 0].tolist()} have no images")
    pos = np.searchsorted(classes, bundle.labels[idx])
    W, b = fit_multinomial(bundle.features[idx], pos, len(classes), reg)
    return SeenClassifier(W, b, classes)


# --- CONSE -------------------------------------------------------------------

def conse_weights(p: np.ndarray, classes: np.ndarray, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-T classes by probability (ties to the lower id) and their
    renormalised weights."""
    if not 1 <= T <= len(classes):
        raise ValueError(f"T must lie in [1, {len(classes)}]")
    order = np.lexsort((classes, -p))[:T]
    w = p[order]
    return classes[order], w / w.sum()


def conse_embed(clf: SeenClassifier, class_embeds, x_embed, T: int) -> np.ndarray:
    """Probability-weighted mean of the T most likely training-class embeddings."""
    class_embeds = np.asarray(class_embeds, dtype=np.float64)
    p = clf.proba(x_embed)[0]
    top, w = conse_weights(p, clf.classes, T)
    return w @ class_embeds[top]


def _cosine(A, B):
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine similarity undefined for a zero-norm embedding")
    return (A / na) @ (B / nb).T


class ConseModel(TrainedMethod):
    name = "conse"

    def __init__(self, clf: SeenClassifier, class_embeddings, T: int):
        self.clf = clf
        self.class_embeddings = np.asarray(class_embeddings, dtype=np.float64)
        self.T = T

    def embed(self, X):
        P = self.clf.proba(X)
        out = np.empty((len(P), self.class_embeddings.shape[1]))
        for i, p in enumerate(P):
            top, w = conse_weights(p, self.clf.classes, self.T)
            out[i] = w @ self.class_embeddings[top]
        return out

    def scores(self, X):
        return _cosine(self.embed(X), self.class_embeddings)


def conse_predict(clf: SeenClassifier, class_embeds, x_embed, T, candidates) -> int:
    return predict(ConseModel(clf, class_embeds, T), x_embed, candidates)


def train_conse(bundle: DatasetBundle, T: int = 10, reg: float = 1e-3) -> ConseModel:
    clf = train_seen_classifier(bundle, reg)
    return ConseModel(clf, bundle.class_embeddings, min(T, len(clf.classes)))


# --- SSE ---------------------------------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / k > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def simplex_lsq(basis, target, iters: int = 500, tol: float = 1e-6):
    """Weights w on the simplex minimising ``||basis^T w - target||^2``.

    ``basis`` holds one vector per row. Projected gradient with step 1/L from
    the uniform mixture. Returns ``(w, residual)`` where residual is the norm
    of the gradient mapping at the final iterate; a warning is issued when it
    exceeds ``tol``.
    """
    B = np.asarray(basis, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    G = B @ B.T
    Bt = B @ t
    L = 2.0 * max(np.linalg.eigvalsh(G)[-1], 1e-12)
    w = np.full(len(B), 1.0 / len(B))
    for _ in range(iters):
        w = project_simplex(w - (2.0 * (G @ w - Bt)) / L)
    residual = L * np.linalg.norm(w - project_simplex(w - (2.0 * (G @ w - Bt)) / L))
    if residual > tol:
        warnings.warn(
            f"simplex least squares did not converge in {iters} iterations (residual {residual:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return w, float(residual)


class SseModel(TrainedMethod):
    """Scores ``pi(x)^T psi(phi(y))``: image and class both expressed as
    mixtures over the training classes."""

    name = "sse"

    def __init__(self, clf: SeenClassifier, class_mixtures, residuals=None):
        self.clf = clf
        self.class_mixtures = np.asarray(class_mixtures, dtype=np.float64)  # (C, z)
        self.residuals = residuals

    def image_mixture(self, X):
        return self.clf.proba(X)

    def scores(self, X):
        return self.image_mixture(X) @ self.class_mixtures.T


def sse_fit(bundle: DatasetBundle, reg: float = 1e-3, iters: int = 500) -> SseModel:
    clf = train_seen_classifier(bundle, reg)
    basis = bundle.class_embeddings[clf.classes]
    mixes, res = [], []
    for phi in bundle.class_embeddings:
        w, r = simplex_lsq(basis, phi, iters)
        mixes.append(w)
        res.append(r)
    return SseModel(clf, np.array(mixes), np.array(res))


# --- SYNC --------------------------------------------------------------------

def sync_alignment_weights(class_embed, phantom_embeds, sigma: float) -> np.ndarray:
    """Gaussian-kernel weights of one class to each phantom, normalised to 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    c = np.asarray(class_embed, dtype=np.float64)
    b = np.asarray(phantom_embeds, dtype=np.float64)
    d2 = ((b - c) ** 2).sum(axis=-1)
    return np.exp(log_softmax(-d2 / (2.0 * sigma ** 2)))


def sync_distortion(W_real, S, V) -> float:
    """``sum_c ||w_c - sum_r s_cr v_r||^2`` with classifiers as rows."""
    return float(np.sum((np.asarray(W_real) - np.asarray(S) @ np.asarray(V)) ** 2))


class SyncModel(TrainedMethod):
    name = "sync"

    def __init__(self, phantom_classifiers, phantom_embeddings, sigma, class_embeddings, real_classifiers=None):
        self.phantom_classifiers = np.asarray(phantom_classifiers, dtype=np.float64)  # (R, d)
        self.phantom_embeddings = np.asarray(phantom_embeddings, dtype=np.float64)  # (R, a)
        self.sigma = float(sigma)
        self.class_embeddings = np.asarray(class_embeddings, dtype=np.float64)
        self.real_classifiers = real_classifiers
        self.alignment = np.array(
            [sync_alignment_weights(e, self.phantom_embeddings, self.sigma) for e in self.class_embeddings]
        )
        self.class_classifiers = self.alignment @ self.phantom_classifiers

    def synthesize(self, embed) -> np.ndarray:
        return sync_alignment_weights(embed, self.phantom_embeddings, self.sigma) @ self.phantom_classifiers

    def scores(self, X):
        return np.asarray(X, dtype=np.float64) @ self.class_classifiers.T


def sync_synthesize(model: SyncModel, unseen_embed) -> np.ndarray:
    """Classifier for a class from its embedding: ``sum_r s_ur v_r``."""
    return model.synthesize(unseen_embed)


def fit_real_classifiers(X, pos, n_classes, reg):
    """One-vs-rest ridge classifiers with +/-1 targets; rows are classes."""
    Y = -np.ones((len(X), n_classes))
    Y[np.arange(len(X)), pos] = 1.0
    A = X.T @ X + reg * np.eye(X.shape[1])
    return np.linalg.solve(A, X.T @ Y).T


def solve_phantoms(W_real, S, v_reg=0.0):
    """Least-squares phantom classifiers minimising the distortion
    (plus ``v_reg * ||V||^2``)."""
    A = S.T @ S + v_reg * np.eye(S.shape[1])
    if np.linalg.cond(A) > 1e14:
        raise np.linalg.LinAlgError("SYNC: alignment system is singular; increase v_reg or sigma")
    return np.linalg.solve(A, S.T @ W_real)


def sync_train(bundle: DatasetBundle, sigma: float = 1.0, reg: float = 1.0, v_reg: float = 0.0) -> SyncModel:
    """Phantoms are pinned to the training-class embeddings (R = #train)."""
    classes = bundle.split.train_classes
    if classes.size == 0:
        raise ValueError("training split is empty")
    idx = bundle.image_indices(classes)
    pos = np.searchsorted(classes, bundle.labels[idx])
    W_real = fit_real_classifiers(bundle.features[idx], pos, len(classes), reg)
    phantoms = bundle.class_embeddings[classes]
    S = np.array([sync_alignment_weights(phantoms[c], phantoms, sigma) for c in range(len(classes))])
    V = solve_phantoms(W_real, S, v_reg)
    return SyncModel(V, phantoms, sigma, bundle.class_embeddings, W_real)
