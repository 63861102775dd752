"""Benchmark orchestration: grid search on validation classes, retraining,
evaluation, and report emission."""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .datamodel import DatasetBundle, SplitSpec, load_dataset, subset_classes
from .evaluation import evaluate_gzsl, evaluate_zsl
from .methods import DEFAULT_GRIDS, METHODS, expand_grid, train_method
from .ranking import ObservationGrid, rank_matrix
from .splitgen import SyntheticConfig, make_synthetic, make_validation_folds

log = logging.getLogger(__name__)

MODES = ("zsl", "gzsl")
RECORD_FIELDS = ("method", "dataset", "fold", "mode", "hyperparameters",
                 "acc_unseen", "acc_seen", "harmonic_mean", "seconds")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSource:
    name: str
    path: str | None = None
    synthetic: SyntheticConfig | None = None

    def load(self) -> DatasetBundle:
        if self.synthetic is not None:
            return make_synthetic(self.synthetic)
        return load_dataset(self.path)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    grid: dict


@dataclass(frozen=True)
class BenchmarkConfig:
    datasets: tuple
    methods: tuple
    folds: int = 1
    modes: tuple = ("zsl",)
    output_dir: str = "results"
    seed: int = 0
    workers: int = 1
    record_seconds: bool = False

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("config needs at least one dataset")
        if not self.methods:
            raise ConfigError("config needs at least one method")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ConfigError(f"modes must be a non-empty subset of {MODES}, got {list(self.modes)}")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")
        for m in self.methods:
            if m.name not in METHODS:
                raise ConfigError(f"unknown method {m.name!r}")
            try:
                if not expand_grid(m.grid):
                    raise ConfigError(f"empty grid for {m.name}")
            except ValueError as exc:
                raise ConfigError(f"{m.name}: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "BenchmarkConfig":
        try:
            datasets = []
            for ds in d["datasets"]:
                if "synthetic" in ds:
                    datasets.append(DatasetSource(ds["name"], synthetic=SyntheticConfig.from_dict(ds["synthetic"])))
                else:
                    datasets.append(DatasetSource(ds["name"], path=os.path.join(base_dir, ds["path"])))
            methods = []
            for m in d["methods"]:
                if isinstance(m, str):
                    m = {"name": m}
                methods.append(MethodSpec(m["name"], m.get("grid", DEFAULT_GRIDS.get(m["name"], {}))))
            return cls(
                datasets=tuple(datasets),
                methods=tuple(methods),
                folds=int(d.get("folds", 1)),
                modes=tuple(d.get("modes", ["zsl"])),
                output_dir=os.path.join(base_dir, d.get("output_dir", "results")),
                seed=int(d.get("seed", 0)),
                workers=int(d.get("workers", 1)),
                record_seconds=bool(d.get("record_seconds", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc!r}") from None

    @classmethod
    def from_file(cls, path) -> "BenchmarkConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))


@dataclass
class ResultsRecord:
    method: str
    dataset: str
    fold: int
    mode: str
    hyperparameters: dict
    acc_unseen: float
    acc_seen: float | None = None
    harmonic_mean: float | None = None
    seconds: float | None = None

    def to_dict(self, with_seconds=True) -> dict:
        d = asdict(self)
        if not with_seconds:
            d["seconds"] = None
        return {k: d[k] for k in RECORD_FIELDS}


@dataclass
class CellFailure:
    method: str
    dataset: str
    fold: int
    error: str
    modes: list = field(default_factory=list)


def final_split(split: SplitSpec) -> SplitSpec:
    """Train on train+val once hyperparameters are fixed."""
    return SplitSpec(split.seen_classes, [], split.test_unseen_classes,
                     split.test_seen_image_indices, split.name)


def selection_bundle(bundle: DatasetBundle) -> DatasetBundle:
    """Train+val classes only, re-indexed; unseen test classes and held-out
    seen images are absent."""
    return subset_classes(bundle, bundle.split.seen_classes)[0]


def select_hyperparameters(method: str, sel: DatasetBundle, grid: dict, seed: int):
    """Grid point with the best validation per-class top-1 (first wins ties)."""
    if sel.split.val_classes.size == 0:
        candidates = expand_grid(grid)
        return candidates[0], None
    best, best_score, errors = None, -np.inf, []
    for params in expand_grid(grid):
        try:
            model = train_method(method, sel, params, seed)
            score = evaluate_zsl(model, sel, sel.split.val_classes).acc_unseen
        except Exception as exc:  # one bad grid point should not sink the cell
            errors.append(f"{params}: {exc}")
            continue
        if score > best_score:
            best, best_score = params, score
    if best is None:
        raise RuntimeError("every grid point failed: " + "; ".join(errors))
    return best, best_score


def run_cell(method: str, grid: dict, dataset: str, fold: int, bundle: DatasetBundle,
             modes, seed: int):
    """Select, retrain and evaluate one (method, dataset, fold) cell."""
    t0 = time.perf_counter()
    params, _ = select_hyperparameters(method, selection_bundle(bundle), grid, seed)
    final = bundle.with_split(final_split(bundle.split))
    model = train_method(method, final, params, seed)
    fit_seconds = time.perf_counter() - t0
    records, failures = [], []
    for mode in modes:
        t1 = time.perf_counter()
        try:
            if mode == "zsl":
                rep = evaluate_zsl(model, final)
            else:
                rep = evaluate_gzsl(model, final)
        except Exception as exc:
            failures.append(CellFailure(method, dataset, fold, f"{mode}: {exc}", [mode]))
            continue
        records.append(ResultsRecord(method, dataset, fold, mode, dict(params), rep.acc_unseen,
                                     rep.acc_seen, rep.harmonic_mean,
                                     fit_seconds + time.perf_counter() - t1))
    return records, failures


def _cell_task(args):
    method, grid, dataset, fold, bundle, modes, seed = args
    try:
        return run_cell(method, grid, dataset, fold, bundle, modes, seed)
    except Exception as exc:
        log.warning("cell %s/%s/fold%d failed: %s", method, dataset, fold, exc)
        return [], [CellFailure(method, dataset, fold, f"{type(exc).__name__}: {exc}", list(modes))]


def dataset_folds(bundle: DatasetBundle, k: int, seed: int) -> list[DatasetBundle]:
    if k == 1:
        return [bundle]
    return [bundle.with_split(s) for s in make_validation_folds(bundle.split, k, seed)]


def benchmark_cells(cfg: BenchmarkConfig):
    """Cells in deterministic order: dataset, fold, method."""
    cells = []
    for ds in cfg.datasets:
        bundle = ds.load()
        for fold, fb in enumerate(dataset_folds(bundle, cfg.folds, cfg.seed)):
            for m in cfg.methods:
                cells.append((m.name, m.grid, ds.name, fold, fb, tuple(cfg.modes), cfg.seed))
    return cells


def run_benchmark(cfg: BenchmarkConfig, write=True):
    """Run every cell; returns ``(records, failures)`` in cell order."""
    cells = benchmark_cells(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(_cell_task, cells))
    else:
        outputs = [_cell_task(c) for c in cells]
    records = [r for recs, _ in outputs for r in recs]
    failures = [f for _, fails in outputs for f in fails]
    if write:
        write_results(records, cfg.output_dir, with_seconds=cfg.record_seconds)
        if failures:
            with open(os.path.join(cfg.output_dir, "failures.json"), "w", encoding="utf-8") as fh:
                json.dump([asdict(f) for f in failures], fh, indent=2)
                fh.write("\n")
    return records, failures


def write_results(records, out_dir, with_seconds=False, fname="results.json"):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, fname)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([r.to_dict(with_seconds) for r in records], fh, indent=2)
        fh.write("\n")
    return path


def read_results(path) -> list[ResultsRecord]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [ResultsRecord(**{k: r.get(k) for k in RECORD_FIELDS}) for r in raw]


# --- reports -----------------------------------------------------------------

def _metric(mode):
    return "acc_unseen" if mode == "zsl" else "harmonic_mean"


def _pct(v):
    return f"{100.0 * v:.1f}"


def render_table(records) -> str:
    """Methods x datasets grid of fold-averaged accuracies in percent.

    ZSL columns show unseen accuracy; GZSL columns show ts/tr/H.
    """
    if not records:
        raise ValueError("no records to report")
    methods = list(dict.fromkeys(r.method for r in records))
    columns = []
    for ds in dict.fromkeys(r.dataset for r in records):
        for mode in MODES:
            if any(r.dataset == ds and r.mode == mode for r in records):
                fields = ["acc_unseen"] if mode == "zsl" else ["acc_unseen", "acc_seen", "harmonic_mean"]
                tag = {"acc_unseen": "ts", "acc_seen": "tr", "harmonic_mean": "H"}
                for f in fields:
                    columns.append((ds, mode, f, f"{ds}/{mode}" + ("" if mode == "zsl" else f"/{tag[f]}")))
    lines = ["method | " + " | ".join(c[3] for c in columns)]
    for m in methods:
        cells = []
        for ds, mode, f, _ in columns:
            vals = [getattr(r, f) for r in records if r.method == m and r.dataset == ds and r.mode == mode]
            vals = [v for v in vals if v is not None]
            cells.append(_pct(float(np.mean(vals))) if vals else "-")
        lines.append(f"{m} | " + " | ".join(cells))
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict:
    """Inverse of :func:`render_table`: ``{(method, column): percent}``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = [h.strip() for h in lines[0].split("|")][1:]
    out = {}
    for ln in lines[1:]:
        parts = [p.strip() for p in ln.split("|")]
        for col, cell in zip(header, parts[1:]):
            if cell != "-":
                out[(parts[0], col)] = float(cell)
    return out


def records_grid(records, mode="zsl", metric=None) -> ObservationGrid:
    metric = metric or _metric(mode)
    rows = [r for r in records if r.mode == mode]
    if not rows:
        raise ValueError(f"no {mode} records")
    return ObservationGrid.from_records(
        (r.method, f"{r.dataset}/fold{r.fold}", getattr(r, metric)) for r in rows
    )


def emit_report(records, fmt: str, out_dir: str) -> list[str]:
    """Write a ``table``, ``ranks`` or ``raw`` report; returns written paths."""
    records = list(records)
    if not records:
        raise ValueError("no records to report")
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "raw":
        return [write_results(records, out_dir, with_seconds=True, fname="raw.json")]
    if fmt == "table":
        path = os.path.join(out_dir, "table.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_table(records))
        return [path]
    if fmt == "ranks":
        paths = []
        for m in MODES:
            if not any(r.mode == m for r in records):
                continue
            rm = rank_matrix(records_grid(records, m))
            path = os.path.join(out_dir, f"ranks_{m}.json")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(rm.to_dict(), fh, indent=2)
                fh.write("\n")
            paths.append(path)
        return paths
    raise ValueError(f"unknown report format {fmt!r}")
