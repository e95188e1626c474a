"""Full-batch GNN training over per-time-step graphs, threshold selection and evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .elliptic import UNLABELED, TimeStepGraph
from .errors import ConfigError, NumericError
from .gcn import NodeClassifier
from .metrics import MetricsReport, confusion, report

THRESHOLD_GRID = np.arange(1001) / 1000.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-3
    weight_decay: float = 5e-5
    class_weights: tuple[float, float] = (0.7, 0.3)  # (illicit, licit)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    early_stop: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
            raise ConfigError(f"class weights must be two positive numbers, got {self.class_weights}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedClassifier:
    model: NodeClassifier
    threshold: float
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def predict_proba(self, graph: TimeStepGraph) -> np.ndarray:
        return self.model.predict_proba(graph)

    def save_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "val_f2"])
            for h in self.history:
                w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["val_f2"])])


def graph_loss(model: NodeClassifier, tape: Tape, graph: TimeStepGraph, class_weights, labels=None):
    _, probs, _ = model.forward(tape, graph)
    return ad.weighted_cross_entropy(tape, probs, graph.label if labels is None else labels, class_weights), probs


def _labeled_scores(model, graphs, use_true=True):
    scores, labels = [], []
    for g in graphs:
        lab = g.true_label if use_true else g.label
        rows = lab != UNLABELED
        scores.append(model.predict_proba(g)[rows])
        labels.append(lab[rows])
    return np.concatenate(scores) if scores else np.zeros(0), np.concatenate(labels) if labels else np.zeros(0)


def train(model: NodeClassifier, graphs_train: list[TimeStepGraph], graphs_val: list[TimeStepGraph],
          cfg: TrainConfig | None = None) -> TrainedClassifier:
    """Sum the per-graph losses each epoch, take one Adam step, keep the best-validation-loss weights."""
    cfg = cfg or TrainConfig()
    if not graphs_train or not graphs_val:
        raise ConfigError("training and validation graph lists must be nonempty")
    if sum(int(np.sum(g.label != UNLABELED)) for g in graphs_train) == 0:
        raise ConfigError("no labeled nodes in the training graphs")
    store = model.params
    store.zero_grad()
    history = []
    best_loss = math.inf
    best_values = store.values()
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        train_loss = 0.0
        for g in graphs_train:
            if not np.any(g.label != UNLABELED):
                continue  # an all-unlabeled step contributes no loss
            tape = Tape()
            loss, _ = graph_loss(model, tape, g, cfg.class_weights)
            tape.backward(loss)
            train_loss += float(loss.value)
        if not math.isfinite(train_loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        ad.adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, t=epoch)

        val_loss = 0.0
        scores, labels = [], []
        for g in graphs_val:
            if not np.any(g.label != UNLABELED):
                continue
            loss, probs = graph_loss(model, Tape(), g, cfg.class_weights)
            val_loss += float(loss.value)
            rows = g.label != UNLABELED
            scores.append(probs.value[rows, 1])
            labels.append(g.label[rows])
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        val_f2 = best_f_beta(np.concatenate(scores), np.concatenate(labels)) if scores else 0.0
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_f2": val_f2})
        if not cfg.early_stop or val_loss < best_loss:
            best_loss = val_loss
            best_values = store.values()
            best_epoch = epoch

    store.load_values(best_values)
    scores, labels = _labeled_scores(model, graphs_val)
    tau = select_threshold(scores, labels)
    return TrainedClassifier(model, tau, history, best_epoch)


# ------------------------------------------------------------------ thresholds


def threshold_scan(scores, labels, beta: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """F-beta at every grid threshold; a node is flagged when ``score >= threshold``."""
    scores = np.asarray(scores, dtype=float)
    pos = np.asarray(labels) > 0
    if scores.shape != pos.shape:
        raise ValueError(f"scores {scores.shape} and labels {pos.shape} differ in shape")
    all_sorted = np.sort(scores)
    pos_sorted = np.sort(scores[pos])
    predicted = scores.size - np.searchsorted(all_sorted, THRESHOLD_GRID, side="left")
    tp = pos_sorted.size - np.searchsorted(pos_sorted, THRESHOLD_GRID, side="left")
    fp = predicted - tp
    fn = pos_sorted.size - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        b2 = beta * beta
        denom = b2 * precision + recall
        f = np.where(denom > 0, (1 + b2) * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return THRESHOLD_GRID, f


def select_threshold(scores, labels, beta: float = 2.0) -> float:
    """Smallest grid threshold in {0, 0.001, ..., 1} maximizing F-beta."""
    pos = np.asarray(labels) > 0
    if pos.all() or not pos.any():
        raise ValueError("threshold selection needs both positive and negative labels")
    grid, f = threshold_scan(scores, labels, beta)
    return float(grid[int(np.argmax(f))])


def best_f_beta(scores, labels, beta: float = 2.0) -> float:
    if scores.size == 0:
        return 0.0
    return float(threshold_scan(scores, labels, beta)[1].max())


# ------------------------------------------------------------------ evaluation


def evaluate_scores(scores, labels, threshold: float) -> MetricsReport:
    scores = np.asarray(scores)
    return report(confusion(scores >= threshold, np.asarray(labels) > 0), threshold)


def evaluate_per_step(classifier: TrainedClassifier, graphs: list[TimeStepGraph]) -> dict[int, MetricsReport]:
    out = {}
    for g in graphs:
        rows = g.true_label != UNLABELED
        out[g.step] = evaluate_scores(classifier.predict_proba(g)[rows], g.true_label[rows], classifier.threshold)
    return out


def evaluate(classifier: TrainedClassifier, graphs: list[TimeStepGraph]) -> MetricsReport:
    """Threshold the illicit probability of every labeled node and pool the confusion counts."""
    counts = np.zeros(4, dtype=int)
    for rep in evaluate_per_step(classifier, graphs).values():
        counts += (rep.tp, rep.fp, rep.fn, rep.tn)
    return report(counts, classifier.threshold)


def extract_embeddings(model: NodeClassifier, graphs: list[TimeStepGraph]) -> tuple[np.ndarray, np.ndarray]:
    """Penultimate activations for every node, with the matching global ids."""
    ids = [g.node_index for g in graphs]
    embs = [model.embed(g) for g in graphs]
    width = model.config.embedding_width
    return (np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64),
            np.concatenate(embs) if embs else np.zeros((0, width)))


AGGREGATED_METRICS = ("f2", "f1", "precision", "recall")


def mean_std(values) -> tuple[float, float]:
    """Sample mean and (n-1) standard deviation, independent of input order."""
    values = sorted(float(v) for v in values)
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def aggregate_seeds(results: list[MetricsReport], metrics=AGGREGATED_METRICS) -> dict[str, tuple[float, float]]:
    """Sample mean and (n-1) standard deviation per metric; independent of result order."""
    if len(results) < 2:
        raise ValueError(f"aggregation needs at least 2 results, got {len(results)}")
    return {m: mean_std(getattr(r, m) for r in results) for m in metrics}


def save_classifier(classifier: TrainedClassifier, path) -> None:
    meta = {"threshold": repr(classifier.threshold), "best_epoch": classifier.best_epoch,
            "model": type(classifier.model).__name__}
    ranks = getattr(classifier.model.config, "ranks", None)
    if ranks is not None:
        meta["ranks"] = ",".join(str(r) for r in ranks)
    ad.save_checkpoint(classifier.model.params, Path(path), meta)
