"""End-to-end experiment pipelines: GNNs, tabular ensembles and embedding-to-ensemble hybrids."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import qboost, trees
from .cp import CpGcnConfig, CpGcnModel
from .elliptic import UNLABELED, DatasetSplit, RawDataset, TimeStepGraph, mask_label_fraction, select_features, temporal_split
from .errors import ConfigError
from .gcn import GcnConfig, GcnModel, parameter_count
from .metrics import MetricsReport, report
from .trainer import (TrainConfig, TrainedClassifier, aggregate_seeds, evaluate_per_step, evaluate_scores,
                      extract_embeddings, mean_std, select_threshold, train)

SCHEMA_VERSION = 1

MODEL_KINDS = ("gcn", "cp-gcn", "rf", "gbt", "qboost", "gcn+rf", "cp-gcn+rf", "cp-gcn+qboost")

# Reference test F2 per pipeline, printed beside the measured values in reports.
REFERENCE_F2 = {
    "gcn": 0.607, "cp-gcn": 0.610, "rf": 0.679, "gbt": 0.706, "qboost": 0.726,
    "gcn+rf": 0.747, "cp-gcn+rf": 0.748, "cp-gcn+qboost": 0.680,
}


@dataclass
class EnsembleConfig:
    n_estimators: int = 50
    rf_max_depth: int = 8
    gbt_max_depth: int = 4
    gbt_learning_rate: float = 0.3
    gbt_l2_reg: float = 1.0
    qboost_max_depth: int = 3
    lambda_grid: tuple[float, ...] = qboost.DEFAULT_LAMBDA_GRID
    class_weights: tuple[float, float] | None = (0.7, 0.3)


@dataclass
class ExperimentConfig:
    kind: str
    data_dir: str | None = None
    bundle_dir: str | None = None
    out_dir: str = "results"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train: TrainConfig = field(default_factory=TrainConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    split: DatasetSplit = field(default_factory=DatasetSplit)
    mask_fraction: float = 0.0
    cp_mode: str = "weighted"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {', '.join(MODEL_KINDS)}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = self.split.to_dict()
        return d


# ------------------------------------------------------------------ tabular io


@dataclass
class Table:
    ids: np.ndarray
    steps: np.ndarray
    X: np.ndarray
    y: np.ndarray  # +1 / -1 for labeled rows only


def labeled_table(graphs: list[TimeStepGraph], features_by_row: np.ndarray, row_of: dict[int, int],
                  use_true_labels: bool) -> Table:
    ids, steps, labels = [], [], []
    for g in graphs:
        lab = g.true_label if use_true_labels else g.label
        keep = lab != UNLABELED
        ids.append(g.node_index[keep])
        steps.append(np.full(int(keep.sum()), g.step))
        labels.append(lab[keep])
    ids = np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)
    rows = np.array([row_of[int(i)] for i in ids], dtype=np.int64)
    return Table(ids, np.concatenate(steps) if steps else np.zeros(0, dtype=np.int64),
                 features_by_row[rows] if rows.size else np.zeros((0, features_by_row.shape[1])),
                 np.concatenate(labels).astype(np.int8) if labels else np.zeros(0, dtype=np.int8))


def _per_step(scores, table: Table, threshold: float) -> dict[int, MetricsReport]:
    return {int(s): evaluate_scores(scores[table.steps == s], table.y[table.steps == s], threshold)
            for s in np.unique(table.steps)}


def _pooled(per_step: dict[int, MetricsReport], threshold: float) -> MetricsReport:
    counts = np.zeros(4, dtype=int)
    for r in per_step.values():
        counts += (r.tp, r.fp, r.fn, r.tn)
    return report(counts, threshold)


# ------------------------------------------------------------------- ensembles


def fit_ensemble(kind: str, train: Table, val: Table, cfg: EnsembleConfig, seed: int):
    """Returns (predict function, size dict, extra info)."""
    cw = cfg.class_weights
    if kind == "rf":
        m = trees.fit_random_forest(train.X, train.y, cfg.n_estimators, cfg.rf_max_depth, seed, class_weights=cw)
        return (lambda X: trees.predict_scores(m, X)), {"n_estimators": len(m.trees)}, {}
    if kind == "gbt":
        m = trees.fit_gbt(train.X, train.y, cfg.n_estimators, cfg.gbt_learning_rate, cfg.gbt_max_depth,
                          cfg.gbt_l2_reg, class_weights=cw, seed=seed)
        return (lambda X: trees.predict_scores(m, X)), {"n_estimators": len(m.trees)}, {}
    if kind == "qboost":
        m = qboost.fit(train.X, train.y, val.X, val.y, cfg.lambda_grid, n=cfg.n_estimators,
                       max_depth=cfg.qboost_max_depth, seed=seed, class_weights=cw)
        return (lambda X: qboost.predict_scores(m, X)), {"n_estimators": m.n_selected}, {
            "lambda": m.lam, "lambda_sweep": m.sweep}
    raise ConfigError(f"unknown ensemble kind {kind!r}")


def run_tabular(kind: str, train_t: Table, val_t: Table, test_t: Table, cfg: EnsembleConfig, seed: int) -> dict:
    t0 = time.perf_counter()
    predict, size, extra = fit_ensemble(kind, train_t, val_t, cfg, seed)
    threshold = select_threshold(predict(val_t.X), val_t.y)
    train_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    scores = predict(test_t.X)
    inference_time = time.perf_counter() - t0
    per_step = _per_step(scores, test_t, threshold)
    return _run_doc(seed, _pooled(per_step, threshold), per_step, size, train_time, inference_time, extra)


def _run_doc(seed, test: MetricsReport, per_step, size, train_time, inference_time, extra=None) -> dict:
    return {
        "seed": seed,
        "test": test.to_dict(),
        "per_step": {str(s): r.to_dict() for s, r in sorted(per_step.items())},
        "size": size,
        "train_time_s": train_time,
        "inference_time_s": inference_time,
        **(extra or {}),
    }


# ------------------------------------------------------------------------ GNNs


def make_gnn(kind: str, seed: int, in_dim: int, cp_mode: str = "weighted"):
    if kind == "gcn":
        return GcnModel(GcnConfig(in_dim=in_dim), seed=seed)
    if kind == "cp-gcn":
        return CpGcnModel(CpGcnConfig(in_dim=in_dim, mode=cp_mode), seed=seed)
    raise ConfigError(f"unknown GNN kind {kind!r}")


def _cache_key(kind: str, split: DatasetSplit, cfg: ExperimentConfig, seed: int):
    return (kind, seed, repr(split.to_dict()), repr(cfg.train), cfg.mask_fraction, cfg.cp_mode)


def train_gnn(kind: str, graphs, split: DatasetSplit, cfg: ExperimentConfig, seed: int, cache: dict | None = None):
    """Train one GNN. ``cache`` (optional) reuses a model trained earlier with the same settings."""
    g_train, g_val, g_test = temporal_split(graphs, split)
    g_train = mask_label_fraction(g_train, cfg.mask_fraction, seed)
    key = _cache_key(kind, split, cfg, seed)
    if cache is not None and key in cache:
        clf, train_time = cache[key]
        return clf, train_time, (g_train, g_val, g_test)
    model = make_gnn(kind, seed, graphs[0].features.shape[1], cfg.cp_mode)
    t0 = time.perf_counter()
    clf = train(model, g_train, g_val, cfg.train)
    train_time = time.perf_counter() - t0
    if cache is not None:
        cache[key] = (clf, train_time)
    return clf, train_time, (g_train, g_val, g_test)


def run_gnn(kind: str, graphs, split, cfg: ExperimentConfig, seed: int,
            cache: dict | None = None) -> tuple[dict, TrainedClassifier]:
    clf, train_time, (_, _, g_test) = train_gnn(kind, graphs, split, cfg, seed, cache)
    t0 = time.perf_counter()
    per_step = evaluate_per_step(clf, g_test)
    inference_time = time.perf_counter() - t0
    doc = _run_doc(seed, _pooled(per_step, clf.threshold), per_step,
                   {"n_parameters": parameter_count(clf.model)}, train_time, inference_time,
                   {"best_epoch": clf.best_epoch})
    return doc, clf


def run_hybrid(kind: str, graphs, split, cfg: ExperimentConfig, seed: int,
               cache: dict | None = None) -> tuple[dict, TrainedClassifier]:
    gnn_kind, ens_kind = kind.split("+")
    clf, gnn_time, (g_train, g_val, g_test) = train_gnn(gnn_kind, graphs, split, cfg, seed, cache)
    ids_fit, emb_fit = extract_embeddings(clf.model, g_train + g_val)
    row_of = {int(i): r for r, i in enumerate(ids_fit)}
    train_t = labeled_table(g_train, emb_fit, row_of, use_true_labels=False)
    val_t = labeled_table(g_val, emb_fit, row_of, use_true_labels=True)
    t0 = time.perf_counter()
    predict, size, extra = fit_ensemble(ens_kind, train_t, val_t, cfg.ensemble, seed)
    threshold = select_threshold(predict(val_t.X), val_t.y)
    train_time = gnn_time + time.perf_counter() - t0

    t0 = time.perf_counter()
    ids_test, emb_test = extract_embeddings(clf.model, g_test)
    test_t = labeled_table(g_test, emb_test, {int(i): r for r, i in enumerate(ids_test)}, use_true_labels=True)
    scores = predict(test_t.X)
    inference_time = time.perf_counter() - t0
    per_step = _per_step(scores, test_t, threshold)
    size = {"n_parameters": parameter_count(clf.model), **size}
    return _run_doc(seed, _pooled(per_step, threshold), per_step, size, train_time, inference_time,
                    {"best_epoch": clf.best_epoch, **extra}), clf


def run_seed(cfg: ExperimentConfig, raw: RawDataset, graphs: list[TimeStepGraph], seed: int,
             cache: dict | None = None) -> dict:
    kind = cfg.kind
    if kind in ("gcn", "cp-gcn"):
        return run_gnn(kind, graphs, cfg.split, cfg, seed, cache)[0]
    if "+" in kind:
        return run_hybrid(kind, graphs, cfg.split, cfg, seed, cache)[0]
    g_train, g_val, g_test = temporal_split(graphs, cfg.split)
    g_train = mask_label_fraction(g_train, cfg.mask_fraction, seed)
    X = select_features(raw, "all_166")
    row_of = raw.index_of()
    tables = [labeled_table(g, X, row_of, use_true_labels=t) for g, t in
              ((g_train, False), (g_val, True), (g_test, True))]
    return run_tabular(kind, *tables, cfg.ensemble, seed)


# ------------------------------------------------------------------ aggregation


def _mean_std(values):
    if len(values) == 1:
        return [float(values[0]), None]
    return list(mean_std(values))


def aggregate_runs(runs: list[dict]) -> dict:
    reports = [MetricsReport.from_dict(r["test"]) for r in runs]
    if len(reports) >= 2:
        agg = {k: list(v) for k, v in aggregate_seeds(reports).items()}
    else:
        agg = {k: [getattr(reports[0], k), None] for k in ("f2", "f1", "precision", "recall")}
    for key in ("train_time_s", "inference_time_s"):
        agg[key] = _mean_std([r[key] for r in runs])
    for key in runs[0]["size"]:
        agg[key] = _mean_std([r["size"][key] for r in runs])
    steps = sorted({s for r in runs for s in r["per_step"]}, key=int)
    agg["per_step_f2"] = {s: _mean_std([r["per_step"][s]["f2"] for r in runs if s in r["per_step"]]) for s in steps}
    return agg


def run_experiment(cfg: ExperimentConfig, raw: RawDataset, graphs: list[TimeStepGraph], progress=None,
                   cache: dict | None = None) -> dict:
    """All seeds of one pipeline kind. Pass the same ``cache`` dict across kinds to share trained GNNs."""
    runs = []
    for seed in cfg.seeds:
        runs.append(run_seed(cfg, raw, graphs, seed, cache))
        if progress:
            progress(seed, runs[-1])
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": cfg.kind,
        "config": cfg.to_dict(),
        "reference_f2": REFERENCE_F2.get(cfg.kind),
        "runs": runs,
        "aggregate": aggregate_runs(runs),
    }


TIMING_FIELDS = ("train_time_s", "inference_time_s")


def strip_timing(doc: dict) -> dict:
    """Copy of a result document without wall-clock fields, for determinism comparisons."""
    out = dict(doc)
    out["runs"] = [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in doc["runs"]]
    out["aggregate"] = {k: v for k, v in doc["aggregate"].items() if k not in TIMING_FIELDS}
    return out
