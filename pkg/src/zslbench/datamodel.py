"""Core data types for zero-shot benchmarks and their on-disk format.

A dataset directory holds four files::

    features.csv          N rows x d columns, no header
    labels.csv            one integer class id per line
    class_embeddings.csv  C rows x a columns
    splits.json           class-id sets plus held-out seen image indices

plus an optional ``class_names.txt`` (one name per line, line i names id i).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"
EMBEDDINGS_FILE = "class_embeddings.csv"
SPLITS_FILE = "splits.json"
NAMES_FILE = "class_names.txt"


class DatasetError(ValueError):
    """Raised when a dataset or split violates its invariants."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _id_array(ids):
    return _frozen(sorted(int(i) for i in ids), np.int64)


@dataclass(frozen=True, eq=False)
class SplitSpec:
    """Disjoint train/val/unseen-test class sets and held-out seen images."""

    train_classes: np.ndarray
    val_classes: np.ndarray
    test_unseen_classes: np.ndarray
    test_seen_image_indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    name: str = "custom"

    def __post_init__(self):
        for attr in ("train_classes", "val_classes", "test_unseen_classes"):
            object.__setattr__(self, attr, _id_array(getattr(self, attr)))
        object.__setattr__(
            self, "test_seen_image_indices", _id_array(self.test_seen_image_indices)
        )
        sets = {
            "train_classes": set(self.train_classes.tolist()),
            "val_classes": set(self.val_classes.tolist()),
            "test_unseen_classes": set(self.test_unseen_classes.tolist()),
        }
        for attr, s in sets.items():
            if len(s) != len(getattr(self, attr)):
                raise DatasetError(f"split {attr} contains duplicate ids")
        names = list(sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                common = sets[a] & sets[b]
                if common:
                    raise DatasetError(
                        f"split {a} and {b} overlap on ids {sorted(common)}"
                    )
        if len(np.unique(self.test_seen_image_indices)) != len(self.test_seen_image_indices):
            raise DatasetError("split test_seen_image_indices contains duplicates")

    @property
    def seen_classes(self) -> np.ndarray:
        return _id_array(np.concatenate([self.train_classes, self.val_classes]))

    @property
    def all_classes(self) -> np.ndarray:
        return _id_array(
            np.concatenate([self.train_classes, self.val_classes, self.test_unseen_classes])
        )

    def to_dict(self) -> dict:
        return {
            "train_classes": self.train_classes.tolist(),
            "val_classes": self.val_classes.tolist(),
            "test_unseen_classes": self.test_unseen_classes.tolist(),
            "test_seen_image_indices": self.test_seen_image_indices.tolist(),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        missing = [k for k in ("train_classes", "val_classes", "test_unseen_classes") if k not in d]
        if missing:
            raise DatasetError(f"split is missing fields {missing}")
        for k in ("train_classes", "val_classes", "test_unseen_classes", "test_seen_image_indices"):
            v = d.get(k, [])
            if not isinstance(v, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in v):
                raise DatasetError(f"split field {k} must be an integer array")
        return cls(
            train_classes=d["train_classes"],
            val_classes=d["val_classes"],
            test_unseen_classes=d["test_unseen_classes"],
            test_seen_image_indices=d.get("test_seen_image_indices", []),
            name=str(d.get("name", "custom")),
        )

    def __eq__(self, other):
        if not isinstance(other, SplitSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True, eq=False)
class CandidateView:
    """A subset of class-embedding rows that keeps the original class ids."""

    ids: np.ndarray
    embeddings: np.ndarray

    def __len__(self):
        return len(self.ids)

    def restrict(self, class_set) -> "CandidateView":
        """Narrow the view to the ids it shares with ``class_set``."""
        keep = np.isin(self.ids, np.asarray(list(class_set), dtype=np.int64))
        if not keep.any():
            raise ValueError("restriction leaves no candidate classes")
        return CandidateView(_frozen(self.ids[keep], np.int64), _frozen(self.embeddings[keep], np.float64))


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """Features, labels, class embeddings and split of one dataset.

    Arrays are copied and made read-only on construction, so a bundle can be
    shared freely between evaluation tasks.
    """

    features: np.ndarray
    labels: np.ndarray
    class_embeddings: np.ndarray
    split: SplitSpec
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        features = _frozen(self.features, np.float64)
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or (labels.size and not np.issubdtype(labels.dtype, np.integer)):
            raise DatasetError("labels must be a 1-d integer array")
        labels = _frozen(labels, np.int64)
        emb = _frozen(self.class_embeddings, np.float64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_embeddings", emb)
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        self.validate()

    @property
    def n_images(self) -> int:
        return self.features.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.class_embeddings.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.class_embeddings.shape[1]

    def validate(self):
        f, y, e = self.features, self.labels, self.class_embeddings
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise DatasetError(f"features must be a non-empty 2-d matrix, got shape {f.shape}")
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise DatasetError(f"class embeddings must be a non-empty 2-d matrix, got shape {e.shape}")
        if not np.all(np.isfinite(f)):
            raise DatasetError("features contain non-finite values")
        if not np.all(np.isfinite(e)):
            raise DatasetError("class embeddings contain non-finite values")
        if len(y) != f.shape[0]:
            raise DatasetError(f"{len(y)} labels for {f.shape[0]} feature rows")
        C = e.shape[0]
        bad = np.flatnonzero((y < 0) | (y >= C))
        if bad.size:
            raise DatasetError(f"label id out of range: {int(y[bad[0]])} at row {int(bad[0])} (C={C})")
        dup = _duplicate_rows(e)
        if dup is not None:
            raise DatasetError(f"class embedding rows {dup[0]} and {dup[1]} are identical")
        s = self.split
        ids = s.all_classes
        if ids.size and (ids[0] < 0 or ids[-1] >= C):
            raise DatasetError(f"split references class ids outside [0, {C})")
        idx = s.test_seen_image_indices
        if idx.size:
            if idx[0] < 0 or idx[-1] >= len(y):
                raise DatasetError("split test_seen_image_indices out of range")
            if not np.all(np.isin(y[idx], s.seen_classes)):
                raise DatasetError("test_seen_image_indices reference images of non-seen classes")
        if self.class_names is not None and len(self.class_names) != C:
            raise DatasetError(f"{len(self.class_names)} class names for {C} classes")

    def image_indices(self, classes, include_held_out: bool = False) -> np.ndarray:
        """Indices of images labelled with one of ``classes``.

        Held-out seen-class test images are excluded unless asked for.
        """
        mask = np.isin(self.labels, np.asarray(list(classes), dtype=np.int64))
        if not include_held_out and self.split.test_seen_image_indices.size:
            mask[self.split.test_seen_image_indices] = False
        return np.flatnonzero(mask)

    def with_split(self, split: SplitSpec) -> "DatasetBundle":
        return DatasetBundle(self.features, self.labels, self.class_embeddings, split, self.class_names)


def _duplicate_rows(m: np.ndarray):
    seen = {}
    for i, row in enumerate(m):
        key = row.tobytes()
        if key in seen:
            return seen[key], i
        seen[key] = i
    return None


def normalize_features(fm: np.ndarray, mode: str = "none") -> np.ndarray:
    """Return ``fm`` unchanged (``none``) or with unit-norm rows (``l2_rows``).

    Zero rows are left as zeros.
    """
    fm = np.asarray(fm, dtype=np.float64)
    if mode == "none":
        return fm
    if mode != "l2_rows":
        raise ValueError(f"unknown normalization mode {mode!r}")
    norms = np.linalg.norm(fm, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return fm / safe


def restrict_candidates(bundle: DatasetBundle, class_set) -> CandidateView:
    ids = _id_array(np.unique(np.asarray(list(class_set), dtype=np.int64)))
    if ids.size == 0:
        raise ValueError("candidate class set is empty")
    if ids[0] < 0 or ids[-1] >= bundle.n_classes:
        unknown = [int(i) for i in ids if i < 0 or i >= bundle.n_classes]
        raise ValueError(f"unknown class ids {unknown}")
    return CandidateView(ids, _frozen(bundle.class_embeddings[ids], np.float64))


def subset_classes(bundle: DatasetBundle, keep) -> tuple[DatasetBundle, np.ndarray]:
    """Bundle holding only the classes in ``keep``, re-indexed densely.

    Images of dropped classes and held-out seen images are removed. Returns the
    new bundle and the array mapping new ids to original ids.
    """
    keep = _id_array(keep)
    remap = {int(c): i for i, c in enumerate(keep)}
    idx = bundle.image_indices(keep)
    labels = np.array([remap[int(c)] for c in bundle.labels[idx]], dtype=np.int64)

    def sub(ids):
        return [remap[int(c)] for c in ids if int(c) in remap]

    s = bundle.split
    split = SplitSpec(sub(s.train_classes), sub(s.val_classes), sub(s.test_unseen_classes), [], s.name)
    names = None
    if bundle.class_names is not None:
        names = [bundle.class_names[c] for c in keep]
    return DatasetBundle(bundle.features[idx], labels, bundle.class_embeddings[keep], split, names), keep


# --- text format -------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _read_lines(path):
    if not os.path.exists(path):
        raise DatasetError(f"missing file: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def _read_matrix(path) -> np.ndarray:
    rows = []
    width = None
    name = os.path.basename(path)
    for lineno, line in enumerate(_read_lines(path), start=1):
        parts = line.split(",")
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise DatasetError(f"{name}:{lineno}: unparseable number in {line!r}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"{name}:{lineno}: ragged row ({len(row)} columns, expected {width})")
        if not all(math.isfinite(v) for v in row):
            raise DatasetError(f"{name}:{lineno}: non-finite value")
        rows.append(row)
    if not rows:
        raise DatasetError(f"{name}: empty matrix")
    return np.array(rows, dtype=np.float64)


def _read_labels(path, n_classes) -> np.ndarray:
    out = []
    name = os.path.basename(path)
    for lineno, line in enumerate(_read_lines(path), start=1):
        try:
            v = int(line.strip())
        except ValueError:
            raise DatasetError(f"{name}:{lineno}: not an integer class id: {line!r}") from None
        if not 0 <= v < n_classes:
            raise DatasetError(f"{name}:{lineno}: label id out of range: {v} (C={n_classes})")
        out.append(v)
    return np.array(out, dtype=np.int64)


def load_dataset(path) -> DatasetBundle:
    """Load and validate a dataset directory."""
    features = _read_matrix(os.path.join(path, FEATURES_FILE))
    emb = _read_matrix(os.path.join(path, EMBEDDINGS_FILE))
    labels = _read_labels(os.path.join(path, LABELS_FILE), emb.shape[0])
    if len(labels) != features.shape[0]:
        raise DatasetError(
            f"{LABELS_FILE}: {len(labels)} labels but {FEATURES_FILE} has {features.shape[0]} rows"
        )
    split_path = os.path.join(path, SPLITS_FILE)
    if not os.path.exists(split_path):
        raise DatasetError(f"missing file: {split_path}")
    with open(split_path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{SPLITS_FILE}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise DatasetError(f"{SPLITS_FILE}: top-level value must be an object")
    try:
        split = SplitSpec.from_dict(raw)
    except DatasetError as exc:
        raise DatasetError(f"{SPLITS_FILE}: {exc}") from None
    names = None
    names_path = os.path.join(path, NAMES_FILE)
    if os.path.exists(names_path):
        names = _read_lines(names_path)
    return DatasetBundle(features, labels, emb, split, names)


def save_dataset(bundle: DatasetBundle, path):
    """Write ``bundle`` in the canonical text format (floats as shortest repr)."""
    os.makedirs(path, exist_ok=True)

    def write_matrix(fname, m):
        with open(os.path.join(path, fname), "w", encoding="utf-8", newline="\n") as fh:
            for row in m:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    write_matrix(FEATURES_FILE, bundle.features)
    write_matrix(EMBEDDINGS_FILE, bundle.class_embeddings)
    with open(os.path.join(path, LABELS_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(v)}\n" for v in bundle.labels)
    with open(os.path.join(path, SPLITS_FILE), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(bundle.split.to_dict(), fh, indent=2)
        fh.write("\n")
    if bundle.class_names is not None:
        with open(os.path.join(path, NAMES_FILE), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{n}\n" for n in bundle.class_names)
