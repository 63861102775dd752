"""Direct attribute prediction (DAP).

One probabilistic classifier per binary attribute; a class is scored by the
product over attributes of ``p(a_m^c | x) / p(a_m^c)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .base import TrainedMethod, candidate_ids
from ._logistic import fit_binary
from .datamodel import DatasetBundle

EPS = 1e-6


class AttributeSignatureTable:
    """Binary class-by-attribute matrix for a set of class ids.

    Two identical rows make the posterior unable to separate those classes,
    so they are rejected here.
    """

    def __init__(self, bits, class_ids=None, check_unique=True):
        bits = np.asarray(bits)
        if bits.ndim != 2 or not np.all((bits == 0) | (bits == 1)):
            raise ValueError("signature table must be a 2-d 0/1 matrix")
        self.bits = bits.astype(np.int8)
        self.class_ids = (
            np.arange(len(bits), dtype=np.int64) if class_ids is None
            else np.asarray(class_ids, dtype=np.int64)
        )
        if check_unique:
            self._check_unique()

    def _check_unique(self):
        seen = {}
        for cid, row in zip(self.class_ids, self.bits):
            key = row.tobytes()
            if key in seen:
                raise ValueError(
                    f"classes {seen[key]} and {int(cid)} have identical attribute signatures"
                )
            seen[key] = int(cid)

    @property
    def n_attributes(self):
        return self.bits.shape[1]

    def restrict(self, class_ids) -> "AttributeSignatureTable":
        pos = {int(c): i for i, c in enumerate(self.class_ids)}
        rows = [pos[int(c)] for c in class_ids]
        return AttributeSignatureTable(self.bits[rows], class_ids)


def binarize_attributes(table) -> np.ndarray:
    """1 where a value is at or above its attribute's mean over classes.

    Returns the raw 0/1 matrix; duplicate rows are only an error once a
    candidate set is fixed (see :class:`AttributeSignatureTable`).
    """
    table = np.asarray(table, dtype=np.float64)
    if not np.all(np.isfinite(table)):
        raise ValueError("attribute table contains non-finite values")
    const = np.flatnonzero(np.ptp(table, axis=0) == 0)
    if const.size:
        raise ValueError(f"attribute columns {const.tolist()} are constant across classes")
    return (table >= table.mean(axis=0)).astype(np.int8)


class AttributeClassifierBank:
    """M logistic attribute classifiers with clamped outputs."""

    def __init__(self, weights, biases, priors=0.5):
        self.weights = np.asarray(weights, dtype=np.float64)  # (d, M)
        self.biases = np.asarray(biases, dtype=np.float64)
        self.priors = np.broadcast_to(np.asarray(priors, dtype=np.float64), self.biases.shape).copy()
        if np.any(self.priors <= 0) or np.any(self.priors >= 1):
            raise ValueError("attribute priors must lie in (0, 1)")

    def proba(self, X) -> np.ndarray:
        z = np.asarray(X, dtype=np.float64) @ self.weights + self.biases
        return np.clip(expit(z), EPS, 1.0 - EPS)


def train_attribute_bank(bundle: DatasetBundle, sig, reg: float = 1e-3, priors=0.5) -> AttributeClassifierBank:
    """One binary logistic classifier per attribute over training images,
    each image labelled with its class's attribute bit."""
    if reg <= 0:
        raise ValueError("reg must be positive")
    bits = sig.bits if isinstance(sig, AttributeSignatureTable) else np.asarray(sig)
    idx = bundle.image_indices(bundle.split.train_classes)
    X = bundle.features[idx]
    T = bits[bundle.labels[idx]]
    ws, bs = [], []
    for m in range(T.shape[1]):
        t = T[:, m]
        if t.min() == t.max():
            raise ValueError(f"attribute {m} has only {'positive' if t[0] else 'negative'} training classes")
        w, b = fit_binary(X, t, reg)
        ws.append(w)
        bs.append(b)
    return AttributeClassifierBank(np.stack(ws, axis=1), np.array(bs), priors)


def dap_log_scores(bank: AttributeClassifierBank, bits, X) -> np.ndarray:
    """Log posterior ratio for every row of ``bits``; shape (N, classes)."""
    p = bank.proba(np.atleast_2d(X))
    bits = np.asarray(bits, dtype=np.float64)
    lp, lq = np.log(p), np.log1p(-p)
    prior = bank.priors
    lpri = bits @ np.log(prior) + (1 - bits) @ np.log1p(-prior)
    return lp @ bits.T + lq @ (1 - bits).T - lpri[None, :]


def dap_posterior(bank: AttributeClassifierBank, sig: AttributeSignatureTable, x_embed, candidates) -> np.ndarray:
    """Posterior ratio score of each candidate (in ascending id order)."""
    ids = candidate_ids(candidates)
    sub = sig.restrict(ids)
    return np.exp(dap_log_scores(bank, sub.bits, x_embed))[0]


class DapModel(TrainedMethod):
    name = "dap"

    def __init__(self, bank: AttributeClassifierBank, sig: AttributeSignatureTable):
        self.bank = bank
        self.sig = sig

    def scores(self, X):
        return dap_log_scores(self.bank, self.sig.bits, X)

    def predict(self, X, candidates):
        self.sig.restrict(candidate_ids(candidates))
        return super().predict(X, candidates)


def train_dap(bundle: DatasetBundle, reg: float = 1e-3, priors=0.5) -> DapModel:
    bits = binarize_attributes(bundle.class_embeddings)
    bank = train_attribute_bank(bundle, bits, reg, priors)
    # duplicates are checked per candidate set at prediction time
    return DapModel(bank, AttributeSignatureTable(bits, check_unique=False))
