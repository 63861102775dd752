"""Uniform scoring contract shared by every trained method."""
from __future__ import annotations

import numpy as np

from .datamodel import CandidateView


class DivergenceError(RuntimeError):
    """Training produced non-finite parameters."""


def candidate_ids(candidates) -> np.ndarray:
    if isinstance(candidates, CandidateView):
        ids = candidates.ids
    else:
        ids = np.asarray(list(candidates) if not isinstance(candidates, np.ndarray) else candidates)
    ids = np.unique(ids.astype(np.int64))
    if ids.size == 0:
        raise ValueError("empty candidate set")
    return ids


class TrainedMethod:
    """A trained zero-shot model.

    Subclasses implement :meth:`scores`, returning an ``(N, C)`` matrix of
    compatibility scores against every class of the dataset. Scores of a
    class never depend on which other classes are candidates, so restricting
    the candidate set can only remove wrong answers, never create them.
    """

    name = "method"

    def scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X, candidates) -> np.ndarray:
        ids = candidate_ids(candidates)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        s = self.scores(X)[:, ids]
        # np.argmax picks the first maximum; ids are ascending
        return ids[np.argmax(s, axis=1)]


def predict(model: TrainedMethod, x_embed, candidates):
    """Highest-scoring candidate class; exact ties go to the smallest id.

    Accepts one feature vector (returns an int) or a matrix of row vectors
    (returns an id array).
    """
    x = np.asarray(x_embed, dtype=np.float64)
    out = model.predict(np.atleast_2d(x), candidates)
    return int(out[0]) if x.ndim == 1 else out


def check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"{name}: parameters became non-finite; lower the learning rate")
