"""Average per-class top-1 accuracy, ZSL/GZSL evaluation and harmonic mean."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import TrainedMethod
from .datamodel import DatasetBundle


@dataclass(frozen=True)
class EvalReport:
    acc_unseen: float
    acc_seen: float | None = None
    harmonic_mean: float | None = None
    per_class: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.acc_seen is None) != (self.harmonic_mean is None):
            raise ValueError("harmonic mean is present exactly when seen accuracy is")
        for v in (self.acc_unseen, self.acc_seen, self.harmonic_mean, *self.per_class.values()):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy {v} outside [0, 1]")


def per_class_top1(predictions, truths, classes=None) -> float:
    """Mean over classes of the fraction of that class's images predicted correctly."""
    return float(np.mean(list(per_class_breakdown(predictions, truths, classes).values())))


def per_class_breakdown(predictions, truths, classes=None) -> dict:
    pred = np.asarray(predictions)
    true = np.asarray(truths)
    if pred.shape != true.shape:
        raise ValueError("predictions and truths differ in length")
    classes = np.unique(true) if classes is None else np.unique(np.asarray(list(classes)))
    if classes.size == 0:
        raise ValueError("no classes to evaluate")
    stray = np.setdiff1d(np.unique(true), classes)
    if stray.size:
        raise ValueError(f"truth labels {stray.tolist()} are outside the evaluated classes")
    out = {}
    for c in classes:
        mine = true == c
        n = int(mine.sum())
        if n == 0:
            raise ValueError(f"class {c} has no test instances")
        out[c.item()] = float(np.sum(pred[mine] == c)) / n
    return out


def harmonic_mean(acc_tr: float, acc_ts: float) -> float:
    if acc_tr + acc_ts == 0:
        return 0.0
    return 2.0 * acc_tr * acc_ts / (acc_tr + acc_ts)


def evaluate_zsl(method: TrainedMethod, bundle: DatasetBundle, target_classes=None) -> EvalReport:
    """Per-class top-1 on images of ``target_classes`` (default: the unseen
    test classes) with predictions restricted to those classes."""
    target = bundle.split.test_unseen_classes if target_classes is None else np.unique(
        np.asarray(list(target_classes), dtype=np.int64))
    if target.size == 0:
        raise ValueError("empty target class set")
    idx = bundle.image_indices(target)
    pred = method.predict(bundle.features[idx], target)
    breakdown = per_class_breakdown(pred, bundle.labels[idx], target)
    return EvalReport(float(np.mean(list(breakdown.values()))), per_class=breakdown)


def evaluate_gzsl(method: TrainedMethod, bundle: DatasetBundle) -> EvalReport:
    """Search over seen and unseen classes; accuracy on unseen test images,
    on held-out seen images, and their harmonic mean."""
    split = bundle.split
    held = split.test_seen_image_indices
    if held.size == 0:
        raise ValueError("split has no held-out seen-class test images")
    if split.test_unseen_classes.size == 0:
        raise ValueError("split has no unseen test classes")
    candidates = split.all_classes
    seen = np.unique(bundle.labels[held])
    idx_u = bundle.image_indices(split.test_unseen_classes)
    pred_u = method.predict(bundle.features[idx_u], candidates)
    pred_s = method.predict(bundle.features[held], candidates)
    bu = per_class_breakdown(pred_u, bundle.labels[idx_u], split.test_unseen_classes)
    bs = per_class_breakdown(pred_s, bundle.labels[held], seen)
    ts = float(np.mean(list(bu.values())))
    tr = float(np.mean(list(bs.values())))
    return EvalReport(ts, tr, harmonic_mean(tr, ts), {**bs, **bu})
