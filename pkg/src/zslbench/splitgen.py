"""Split construction, pretraining-leakage audits, validation folds and
synthetic datasets."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .datamodel import DatasetBundle, SplitSpec


class SplitError(ValueError):
    pass


def normalize_name(name: str) -> str:
    """Case-fold and collapse whitespace/underscores: 'Giant_Panda' -> 'giant panda'."""
    return re.sub(r"[\s_]+", " ", name).strip().casefold()


def read_name_list(path) -> list[str]:
    """One name per line, UTF-8; blank lines are ignored."""
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def audit_overlap(split: SplitSpec, names, pretrain) -> list[str]:
    """Describe every leakage or disjointness problem of ``split``.

    A test class leaks when its normalized name is on the pretraining list.
    """
    violations = []
    groups = {
        "train": split.train_classes.tolist(),
        "val": split.val_classes.tolist(),
        "test": split.test_unseen_classes.tolist(),
    }
    keys = list(groups)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            for c in sorted(set(groups[a]) & set(groups[b])):
                violations.append(f"class {c} is in both {a} and {b}")
    pretrain = {normalize_name(p) for p in pretrain}
    if pretrain:
        for c in groups["test"]:
            if names is None or c >= len(names) or not str(names[c]).strip():
                raise SplitError(f"class {c} has no name; cannot audit against the pretraining list")
            if normalize_name(names[c]) in pretrain:
                violations.append(f"test class {c} ({names[c]}) appears in the pretraining classes")
    return violations


def _counts(n, ratios):
    ratios = tuple(ratios)
    if len(ratios) != 3:
        raise ValueError("ratios must be (train, val, test)")
    if all(isinstance(r, (int, np.integer)) for r in ratios):
        if sum(ratios) != n:
            raise ValueError(f"class counts {ratios} do not sum to {n}")
        return tuple(int(r) for r in ratios)
    total = float(sum(ratios))
    n_val = int(round(n * ratios[1] / total))
    n_test = int(round(n * ratios[2] / total))
    return n - n_val - n_test, n_val, n_test


def holdout_images(labels, classes, fraction, rng) -> np.ndarray:
    """Seeded per-class image holdout; at least one image per class stays
    available for training."""
    held = []
    for c in sorted(int(c) for c in classes):
        idx = np.flatnonzero(labels == c)
        k = min(int(round(fraction * len(idx))), max(len(idx) - 1, 0))
        if k > 0:
            held.extend(rng.choice(idx, size=k, replace=False).tolist())
    return np.array(sorted(held), dtype=np.int64)


def propose_split(classes, names, pretrain, ratios, seed, labels=None,
                  holdout_fraction=0.2, name="PS") -> SplitSpec:
    """Split whose unseen test classes are all absent from ``pretrain``.

    ``ratios`` is (train, val, test) as class counts or fractions. When
    ``labels`` is given, ``holdout_fraction`` of each seen class's images is
    reserved for generalized zero-shot evaluation.
    """
    classes = sorted(int(c) for c in classes)
    n_train, n_val, n_test = _counts(len(classes), ratios)
    pre = {normalize_name(p) for p in pretrain}
    clean = [c for c in classes if normalize_name(names[c]) not in pre]
    if len(clean) < n_test:
        raise SplitError(
            f"only {len(clean)} classes are absent from the pretraining list; {n_test} test classes needed"
        )
    rng = np.random.default_rng(seed)
    test = rng.choice(np.array(clean), size=n_test, replace=False).tolist()
    rest = rng.permutation(np.array([c for c in classes if c not in set(test)], dtype=np.int64))
    train, val = rest[:n_train].tolist(), rest[n_train:n_train + n_val].tolist()
    held = []
    if labels is not None:
        held = holdout_images(np.asarray(labels), train + val, holdout_fraction, rng)
    return SplitSpec(train, val, test, held, name)


def make_validation_folds(split: SplitSpec, k: int, seed) -> list[SplitSpec]:
    """k re-partitions of train+val classes; test classes stay put.

    Validation sets are consecutive chunks of one seeded permutation, so they
    are pairwise disjoint whenever ``k * |val| <= |train + val|``.
    """
    if k < 2:
        raise SplitError("need at least 2 folds")
    pool = split.seen_classes
    n_val = len(split.val_classes)
    if n_val == 0:
        raise SplitError("split has no validation classes to re-partition")
    if k > len(pool) or n_val >= len(pool):
        raise SplitError(f"{k} folds exceed the class budget of {len(pool)} train+val classes")
    perm = np.random.default_rng(seed).permutation(pool)
    folds = []
    for i in range(k):
        pick = np.take(perm, np.arange(i * n_val, (i + 1) * n_val), mode="wrap")
        val = set(pick.tolist())
        train = [c for c in pool.tolist() if c not in val]
        folds.append(SplitSpec(train, sorted(val), split.test_unseen_classes,
                               split.test_seen_image_indices, f"{split.name}-fold{i}"))
    return folds


@dataclass(frozen=True)
class SyntheticConfig:
    n_classes: int = 30
    n_train: int = 20
    n_val: int = 5
    n_test: int = 5
    attr_dim: int = 10
    feat_dim: int = 20
    images_per_class: int = 50
    noise_sigma: float = 0.05
    seed: int = 7
    holdout_fraction: float = 0.2
    max_cosine: float = 0.95

    def __post_init__(self):
        if self.n_train + self.n_val + self.n_test != self.n_classes:
            raise ValueError("train/val/test class counts must partition n_classes")
        if min(self.n_train, self.n_test) < 1 or self.n_val < 0:
            raise ValueError("need at least one train and one test class")
        if self.attr_dim < 1 or self.feat_dim < 1 or self.images_per_class < 1:
            raise ValueError("dimensions and image counts must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        return cls(**d)


def _class_embeddings(cfg: SyntheticConfig, rng, retries=100):
    for _ in range(retries):
        phi = rng.normal(size=(cfg.n_classes, cfg.attr_dim))
        phi /= np.linalg.norm(phi, axis=1, keepdims=True)
        cos = phi @ phi.T
        np.fill_diagonal(cos, -1.0)
        if cos.max() < cfg.max_cosine:
            return phi
    raise SplitError(
        f"could not draw {cfg.n_classes} embeddings in {cfg.attr_dim} dims with pairwise cosine "
        f"< {cfg.max_cosine} after {retries} tries"
    )


def make_synthetic(cfg: SyntheticConfig) -> DatasetBundle:
    """Features ``M* phi(y) + noise`` for a seeded Gaussian ``M*``."""
    rng = np.random.default_rng(cfg.seed)
    phi = _class_embeddings(cfg, rng)
    M = rng.normal(size=(cfg.feat_dim, cfg.attr_dim))
    labels = np.repeat(np.arange(cfg.n_classes), cfg.images_per_class)
    X = phi[labels] @ M.T + cfg.noise_sigma * rng.normal(size=(len(labels), cfg.feat_dim))
    perm = rng.permutation(cfg.n_classes)
    train = perm[:cfg.n_train].tolist()
    val = perm[cfg.n_train:cfg.n_train + cfg.n_val].tolist()
    test = perm[cfg.n_train + cfg.n_val:].tolist()
    held = holdout_images(labels, train + val, cfg.holdout_fraction, rng)
    split = SplitSpec(train, val, test, held, "PS")
    names = [f"class_{i:03d}" for i in range(cfg.n_classes)]
    return DatasetBundle(X, labels, phi, split, names)
