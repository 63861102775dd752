"""Friedman-style rank matrices and robustness summaries across folds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObservationGrid:
    """Scores of each method on each (dataset, fold) observation.

    ``scores[i][j]`` is the score of ``methods[i]`` on ``observations[j]``;
    missing cells are ``nan``.
    """

    methods: tuple
    observations: tuple
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "observations", tuple(self.observations))
        s = np.asarray(self.scores, dtype=np.float64)
        if s.shape != (len(self.methods), len(self.observations)):
            raise ValueError(f"scores shape {s.shape} does not match {len(self.methods)} methods x "
                             f"{len(self.observations)} observations")
        object.__setattr__(self, "scores", s)

    @classmethod
    def from_records(cls, records, methods=None, observations=None):
        """Build a grid from ``(method, observation, score)`` triples."""
        records = list(records)
        methods = list(methods) if methods is not None else list(dict.fromkeys(r[0] for r in records))
        observations = (list(observations) if observations is not None
                        else list(dict.fromkeys(r[1] for r in records)))
        mi = {m: i for i, m in enumerate(methods)}
        oi = {o: j for j, o in enumerate(observations)}
        s = np.full((len(methods), len(observations)), np.nan)
        for m, o, v in records:
            s[mi[m], oi[o]] = v
        return cls(methods, observations, s)

    def check_complete(self):
        missing = np.argwhere(np.isnan(self.scores))
        if missing.size:
            i, j = missing[0]
            raise ValueError(f"incomplete grid: no score for method {self.methods[i]!r} "
                             f"on observation {self.observations[j]!r} ({len(missing)} missing)")


@dataclass(frozen=True)
class RankMatrix:
    methods: tuple  # ordered by ascending mean rank
    counts: np.ndarray  # counts[i, j]: times methods[i] ranked (j+1)-th
    mean_rank: np.ndarray

    def to_dict(self):
        return {
            "methods": list(self.methods),
            "counts": self.counts.tolist(),
            "mean_rank": [float(v) for v in self.mean_rank],
        }


def observation_ranks(scores: np.ndarray) -> np.ndarray:
    """Ranks (1 = best) of each method per observation column.

    Higher score is better; ties go to the method listed first.
    """
    n_methods, n_obs = scores.shape
    ranks = np.empty((n_methods, n_obs), dtype=np.int64)
    for j in range(n_obs):
        # stable sort on -score keeps declaration order among ties
        order = np.argsort(-scores[:, j], kind="stable")
        ranks[order, j] = np.arange(1, n_methods + 1)
    return ranks


def rank_matrix(grid: ObservationGrid) -> RankMatrix:
    grid.check_complete()
    n = len(grid.methods)
    ranks = observation_ranks(grid.scores)
    counts = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        counts[i] = np.bincount(ranks[i] - 1, minlength=n)
    mean = ranks.mean(axis=1)
    order = np.argsort(mean, kind="stable")
    return RankMatrix(tuple(grid.methods[i] for i in order), counts[order], mean[order])


@dataclass(frozen=True)
class RobustnessEntry:
    method: str
    dataset: str
    minimum: float
    mean: float
    maximum: float

    @property
    def spread(self) -> float:
        return self.maximum - self.minimum


def robustness_report(scores) -> list[RobustnessEntry]:
    """Min/mean/max across folds per (method, dataset).

    ``scores`` maps ``(method, dataset)`` to the list of per-fold scores.
    """
    out = []
    for (method, dataset), vals in scores.items():
        vals = np.asarray(list(vals), dtype=np.float64)
        if len(vals) < 2:
            raise ValueError(f"{method} on {dataset}: robustness needs at least 2 folds, got {len(vals)}")
        out.append(RobustnessEntry(method, dataset, float(vals.min()), float(vals.mean()), float(vals.max())))
    return out
