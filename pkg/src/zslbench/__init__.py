"""Zero-shot learning benchmark: ten methods, one data model, ZSL/GZSL evaluation."""
from .base import TrainedMethod, predict
from .datamodel import (
    CandidateView,
    DatasetBundle,
    DatasetError,
    SplitSpec,
    load_dataset,
    normalize_features,
    restrict_candidates,
    save_dataset,
)
from .evaluation import EvalReport, evaluate_gzsl, evaluate_zsl, harmonic_mean, per_class_top1

__version__ = "0.1.0"

__all__ = [
    "CandidateView",
    "DatasetBundle",
    "DatasetError",
    "EvalReport",
    "SplitSpec",
    "TrainedMethod",
    "evaluate_gzsl",
    "evaluate_zsl",
    "harmonic_mean",
    "load_dataset",
    "normalize_features",
    "per_class_top1",
    "predict",
    "restrict_candidates",
    "save_dataset",
]
