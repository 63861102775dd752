"""Name -> trainer registry with default hyperparameter grids."""
from __future__ import annotations

import itertools

from .attribute_dap import train_dap
from .base import TrainedMethod
from .datamodel import DatasetBundle
from .hybrid import sse_fit, sync_train, train_conse
from .linear_compat import EszslConfig, SgdConfig, train_eszsl, train_sgd
from .nonlinear_compat import CmtStar, fit_novelty, train_cmt, train_latem


def _sgd(params, seed):
    return SgdConfig(
        learning_rate=float(params.get("learning_rate", 0.01)),
        epochs=int(params.get("epochs", 10)),
        seed=seed,
        margin=float(params.get("margin", 1.0)),
    )


def _cmt_star(bundle, p, seed):
    model = train_cmt(bundle, _sgd(p, seed), int(p.get("hidden", 64)))
    return CmtStar(model, fit_novelty(model, bundle, float(p.get("quantile", 0.95))))


TRAINERS = {
    "devise": lambda b, p, s: train_sgd("devise", b, _sgd(p, s)),
    "ale": lambda b, p, s: train_sgd("ale", b, _sgd(p, s)),
    "sje": lambda b, p, s: train_sgd("sje", b, _sgd(p, s)),
    "eszsl": lambda b, p, s: train_eszsl(b, EszslConfig(float(p.get("gamma", 1.0)), float(p.get("lambda_", 1.0)))),
    "latem": lambda b, p, s: train_latem(b, _sgd(p, s), int(p.get("K", 2))),
    "cmt": lambda b, p, s: train_cmt(b, _sgd(p, s), int(p.get("hidden", 64))),
    "cmt_star": _cmt_star,
    "dap": lambda b, p, s: train_dap(b, float(p.get("reg", 1e-3)), float(p.get("prior", 0.5))),
    "conse": lambda b, p, s: train_conse(b, int(p.get("T", 10)), float(p.get("reg", 1e-3))),
    "sse": lambda b, p, s: sse_fit(b, float(p.get("reg", 1e-3))),
    "sync": lambda b, p, s: sync_train(b, float(p.get("sigma", 1.0)), float(p.get("reg", 1.0)),
                                       float(p.get("v_reg", 0.0))),
}

DEFAULT_GRIDS = {
    "devise": {"learning_rate": [0.01, 0.001], "epochs": [5]},
    "ale": {"learning_rate": [0.01, 0.001], "epochs": [5]},
    "sje": {"learning_rate": [0.01, 0.001], "epochs": [5]},
    "eszsl": {"gamma": [0.1, 1.0, 10.0], "lambda_": [0.1, 1.0, 10.0]},
    "latem": {"learning_rate": [0.01], "epochs": [5], "K": [2]},
    "cmt": {"learning_rate": [0.01], "epochs": [10], "hidden": [64]},
    "cmt_star": {"learning_rate": [0.01], "epochs": [10], "hidden": [64], "quantile": [0.95]},
    "dap": {"reg": [1e-3, 1e-1]},
    "conse": {"T": [10], "reg": [1e-3, 1e-1]},
    "sse": {"reg": [1e-3, 1e-1]},
    "sync": {"sigma": [0.5, 1.0], "reg": [1.0]},
}

METHODS = tuple(TRAINERS)


def train_method(name: str, bundle: DatasetBundle, params: dict, seed: int) -> TrainedMethod:
    if name not in TRAINERS:
        raise KeyError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return TRAINERS[name](bundle, params, seed)


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product of a ``{param: [values]}`` grid, in key order."""
    if not grid:
        return [{}]
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ValueError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
