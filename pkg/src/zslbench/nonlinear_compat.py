"""LATEM (piecewise-linear compatibility) and CMT (two-layer tanh mapping).

CMT* adds threshold-based novelty detection on top of a trained CMT model.
"""
from __future__ import annotations

import numpy as np

from .base import DivergenceError, TrainedMethod, candidate_ids, check_finite
from .datamodel import CandidateView, DatasetBundle
from .linear_compat import SgdConfig, _devise_terms, _sample_setup, _training_data, sgd_order


class LatemModel(TrainedMethod):
    """K bilinear maps; a pair is scored by the best of them."""

    name = "latem"

    def __init__(self, W_set, class_embeddings):
        self.W_set = np.asarray(W_set, dtype=np.float64)
        if self.W_set.ndim != 3 or self.W_set.shape[0] < 1:
            raise ValueError("W_set must have shape (K, d, a) with K >= 1")
        self.class_embeddings = np.asarray(class_embeddings, dtype=np.float64)

    @property
    def K(self):
        return self.W_set.shape[0]

    def scores(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.max(np.stack([(X @ W) @ self.class_embeddings.T for W in self.W_set]), axis=0)


def latem_scores(W_set, x_embed, y_embed) -> np.ndarray:
    """The K individual bilinear scores of one pair."""
    W_set = np.asarray(W_set, dtype=np.float64)
    x = np.asarray(x_embed, dtype=np.float64)
    y = np.asarray(y_embed, dtype=np.float64)
    if W_set.ndim != 3 or W_set.shape[1:] != (x.shape[0], y.shape[0]):
        raise ValueError(f"shape mismatch: x {x.shape}, W_set {W_set.shape}, y {y.shape}")
    return np.array([x @ W @ y for W in W_set])


def latem_compatibility(W_set, x_embed, y_embed) -> float:
    return float(np.max(latem_scores(W_set, x_embed, y_embed)))


def _latem_step_terms(W_set, x, phi, pos, margin):
    s_all = np.stack([(x @ W) @ phi.T for W in W_set])  # (K, z)
    chosen = np.argmax(s_all, axis=0)  # ties -> lowest matrix index
    s = np.max(s_all, axis=0)
    if not np.all(np.isfinite(s)):
        raise DivergenceError("latem: scores became non-finite; lower the learning rate")
    loss, coef = _devise_terms(s, pos, margin)
    return loss, coef, chosen


def latem_loss(W_set, x_embed, label, class_embeddings, train_classes, margin=1.0) -> float:
    """Pairwise ranking loss evaluated with the max-over-K compatibility."""
    return _latem_loss_grad(W_set, x_embed, label, class_embeddings, train_classes, margin)[0]


def latem_subgradient(W_set, x_embed, label, class_embeddings, train_classes, margin=1.0):
    return _latem_loss_grad(W_set, x_embed, label, class_embeddings, train_classes, margin)[1]


def _latem_loss_grad(W_set, x_embed, label, class_embeddings, train_classes, margin):
    W_set = np.asarray(W_set, dtype=np.float64)
    x, phi, pos = _sample_setup(x_embed, label, class_embeddings, train_classes)
    loss, coef, chosen = _latem_step_terms(W_set, x, phi, pos, margin)
    grad = np.stack([np.outer(x, (coef * (chosen == i)) @ phi) for i in range(len(W_set))])
    return loss, grad


def train_latem(bundle: DatasetBundle, cfg: SgdConfig, K: int = 2) -> LatemModel:
    """Per-sample SGD on the ranking loss; only the selected matrix of each
    involved pair receives its share of the update."""
    if K < 1:
        raise ValueError("K must be >= 1")
    X, pos, phi = _training_data(bundle)
    W_set = np.zeros((K, bundle.feat_dim, bundle.embed_dim))
    lr, margin = cfg.learning_rate, cfg.margin
    for epoch, order in enumerate(sgd_order(len(X), cfg.epochs, cfg.seed)):
        for n in order:
            x = X[n]
            loss, coef, chosen = _latem_step_terms(W_set, x, phi, pos[n], margin)
            if loss > 0:
                for i in range(K):
                    W_set[i] -= lr * np.outer(x, (coef * (chosen == i)) @ phi)
        check_finite(f"latem epoch {epoch}", W_set)
    return LatemModel(W_set, bundle.class_embeddings)


# --- CMT ---------------------------------------------------------------------

class CmtModel(TrainedMethod):
    """Maps features into the class-embedding space with ``W1 tanh(W2 x)``;
    classes are scored by negative Euclidean distance to the mapped point."""

    name = "cmt"

    def __init__(self, W1, W2, class_embeddings):
        self.W1 = np.asarray(W1, dtype=np.float64)
        self.W2 = np.asarray(W2, dtype=np.float64)
        if self.W1.shape[1] != self.W2.shape[0]:
            raise ValueError(f"W1 {self.W1.shape} and W2 {self.W2.shape} do not compose")
        self.class_embeddings = np.asarray(class_embeddings, dtype=np.float64)

    @property
    def hidden(self):
        return self.W2.shape[0]

    def transform(self, X):
        return np.tanh(np.asarray(X, dtype=np.float64) @ self.W2.T) @ self.W1.T

    def distances(self, X):
        m = self.transform(X)
        e = self.class_embeddings
        d2 = (m ** 2).sum(1)[:, None] - 2 * m @ e.T + (e ** 2).sum(1)[None, :]
        return np.sqrt(np.maximum(d2, 0.0))

    def scores(self, X):
        return -self.distances(X)


def cmt_map(W1, W2, x_embed) -> np.ndarray:
    W1 = np.asarray(W1, dtype=np.float64)
    W2 = np.asarray(W2, dtype=np.float64)
    x = np.asarray(x_embed, dtype=np.float64)
    if W2.shape[1] != x.shape[0] or W1.shape[1] != W2.shape[0]:
        raise ValueError(f"shape mismatch: W1 {W1.shape}, W2 {W2.shape}, x {x.shape}")
    return W1 @ np.tanh(W2 @ x)


def cmt_loss_grad(W1, W2, x, target):
    """Squared reconstruction error ``||target - W1 tanh(W2 x)||^2`` and its
    gradients with respect to W1 and W2."""
    h = np.tanh(W2 @ x)
    r = W1 @ h - target
    dh = 2.0 * (W1.T @ r) * (1.0 - h ** 2)
    return float(r @ r), 2.0 * np.outer(r, h), np.outer(dh, x)


def init_cmt(d, a, hidden, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(seed))
    W2 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(hidden, d))
    W1 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(a, hidden))
    return W1, W2


def train_cmt(bundle: DatasetBundle, cfg: SgdConfig, hidden: int = 64, init=None) -> CmtModel:
    """Fit the two-layer mapping by per-sample SGD on squared error.

    ``init`` optionally supplies starting ``(W1, W2)``; otherwise small seeded
    Gaussian weights are drawn.
    """
    if hidden < 1:
        raise ValueError("hidden width must be >= 1")
    X, pos, phi = _training_data(bundle)
    if init is None:
        W1, W2 = init_cmt(bundle.feat_dim, bundle.embed_dim, hidden, cfg.seed)
    else:
        W1, W2 = (np.array(w, dtype=np.float64) for w in init)
    lr = cfg.learning_rate
    for epoch, order in enumerate(sgd_order(len(X), cfg.epochs, cfg.seed)):
        for n in order:
            loss, g1, g2 = cmt_loss_grad(W1, W2, X[n], phi[pos[n]])
            if not np.isfinite(loss):
                raise DivergenceError(f"cmt epoch {epoch}: loss became non-finite; lower the learning rate")
            if loss > 0:
                W1 -= lr * g1
                W2 -= lr * g2
        check_finite(f"cmt epoch {epoch}", W1, W2)
    return CmtModel(W1, W2, bundle.class_embeddings)


class NoveltyDetector:
    """Per-seen-class distance thresholds in the mapped space."""

    def __init__(self, classes, thresholds, quantile):
        self.classes = np.asarray(classes, dtype=np.int64)
        self.thresholds = np.asarray(thresholds, dtype=np.float64)
        self.quantile = quantile
        if not np.all(np.isfinite(self.thresholds)):
            raise ValueError("novelty thresholds must be finite")

    def threshold_of(self, class_ids):
        lookup = dict(zip(self.classes.tolist(), self.thresholds.tolist()))
        return np.array([lookup[int(c)] for c in class_ids])


def fit_novelty(model: CmtModel, bundle: DatasetBundle, quantile: float = 0.95) -> NoveltyDetector:
    """Threshold per training class: the ``quantile`` of distances between its
    mapped training images and its class embedding."""
    if not 0 < quantile <= 1:
        raise ValueError("quantile must lie in (0, 1]")
    classes = bundle.split.train_classes
    idx = bundle.image_indices(classes)
    dist = model.distances(bundle.features[idx])
    labels = bundle.labels[idx]
    thresholds = []
    for c in classes:
        mine = labels == c
        if not mine.any():
            raise ValueError(f"class {int(c)} has no training images")
        thresholds.append(np.quantile(dist[mine, c], quantile))
    return NoveltyDetector(classes, thresholds, quantile)


def route_unseen(model: CmtModel, detector: NoveltyDetector, X, seen_ids) -> np.ndarray:
    """True where the nearest seen class lies beyond its own threshold."""
    d = model.distances(X)[:, seen_ids]
    nearest = np.argmin(d, axis=1)
    thr = detector.threshold_of(seen_ids)
    return d[np.arange(len(d)), nearest] > thr[nearest]


class CmtStar(TrainedMethod):
    """CMT with novelty routing: seen candidates for familiar-looking images,
    unseen candidates for novel ones."""

    name = "cmt_star"

    def __init__(self, model: CmtModel, detector: NoveltyDetector):
        self.model = model
        self.detector = detector

    def scores(self, X):
        return self.model.scores(X)

    def predict(self, X, candidates):
        ids = candidate_ids(candidates)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        is_seen = np.isin(ids, self.detector.classes)
        seen, unseen = ids[is_seen], ids[~is_seen]
        if seen.size == 0:
            return self.model.predict(X, unseen)
        if unseen.size == 0:
            return self.model.predict(X, seen)
        novel = route_unseen(self.model, self.detector, X, seen)
        out = np.where(novel, self.model.predict(X, unseen), self.model.predict(X, seen))
        assert np.array_equal(np.isin(out, seen), ~novel)
        return out


def cmt_star_predict(model: CmtModel, detector: NoveltyDetector, x_embed, seen, unseen):
    """Route one image (or a batch) to the seen or unseen candidates."""
    seen_ids = seen.ids if isinstance(seen, CandidateView) else np.asarray(list(seen))
    unseen_ids = unseen.ids if isinstance(unseen, CandidateView) else np.asarray(list(unseen))
    x = np.asarray(x_embed, dtype=np.float64)
    X = np.atleast_2d(x)
    seen_ids = candidate_ids(seen_ids)
    novel = route_unseen(model, detector, X, seen_ids)
    out = np.where(novel, model.predict(X, unseen_ids), model.predict(X, seen_ids))
    return int(out[0]) if x.ndim == 1 else out
