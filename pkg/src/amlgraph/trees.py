"""Decision trees, random forest and second-order gradient-boosted trees, written on numpy.

Labels are signed: +1 illicit, -1 licit. A split sends rows with ``x[feature] < threshold``
to the left child. Thresholds sit midway between the two neighbouring observed values
(or at the upper one when the midpoint rounds down onto the lower), so the training
partition is reproduced exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FitError, ShapeError

LEAF = -1
_MIN_GAIN = 1e-12


@dataclass
class DecisionTree:
    feature: np.ndarray      # int, LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # leaf score
    max_depth: int
    n_features: int

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] == LEAF:
                best = max(best, d)
            else:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature[n]] < self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active[rows] = self.feature[node[rows]] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _check_width(X, self.n_features)
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] == LEAF:
                nodes.append({"id": i, "leaf": float(self.value[i])})
            else:
                nodes.append({"id": i, "feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                              "left": int(self.left[i]), "right": int(self.right[i])})
        return {"max_depth": self.max_depth, "n_features": self.n_features, "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        n = len(d["nodes"])
        feat, thr = np.full(n, LEAF), np.zeros(n)
        left, right, value = np.full(n, LEAF), np.full(n, LEAF), np.zeros(n)
        for node in d["nodes"]:
            i = node["id"]
            if "leaf" in node:
                value[i] = node["leaf"]
            else:
                feat[i], thr[i], left[i], right[i] = node["feature"], node["threshold"], node["left"], node["right"]
        return cls(feat, thr, left, right, value, d["max_depth"], d["n_features"])


def _check_width(X, n_features) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ShapeError(f"expected {n_features} feature columns, got shape {X.shape}")
    return X


# ----------------------------------------------------------------- split search


def _gini_best_split(xs, pos_w, neg_w):
    """Best split of sorted column ``xs``; returns (gain, position) with position = left size."""
    cp = np.cumsum(pos_w)[:-1]
    cn = np.cumsum(neg_w)[:-1]
    tp, tn = cp[-1] + pos_w[-1], cn[-1] + neg_w[-1]
    total = tp + tn
    lw = cp + cn
    rw = total - lw
    valid = (xs[:-1] < xs[1:]) & (lw > 0) & (rw > 0)
    if not valid.any():
        return -np.inf, -1
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = 1.0 - (cp / lw) ** 2 - (cn / lw) ** 2
        rp, rn = tp - cp, tn - cn
        gr = 1.0 - (rp / rw) ** 2 - (rn / rw) ** 2
    parent = 1.0 - (tp / total) ** 2 - (tn / total) ** 2
    gain = parent - (lw * gl + rw * gr) / total
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), i + 1


def _newton_best_split(xs, g, h, l2):
    cg = np.cumsum(g)[:-1]
    ch = np.cumsum(h)[:-1]
    G, H = cg[-1] + g[-1], ch[-1] + h[-1]
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return -np.inf, -1
    gain = 0.5 * (cg ** 2 / (ch + l2) + (G - cg) ** 2 / (H - ch + l2) - G ** 2 / (H + l2))
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), i + 1


def _grow(X, n_features_split, max_depth, rng, leaf_value, split_search, stats):
    """Depth-first greedy growth. ``stats`` are per-row arrays handed to the split search."""
    feat, thr, left, right, value = [], [], [], [], []

    def new_node():
        for arr in (feat, left, right):
            arr.append(LEAF)
        thr.append(0.0)
        value.append(0.0)
        return len(feat) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    d = X.shape[1]
    while stack:
        node, rows, depth = stack.pop()
        value[node] = leaf_value(*(s[rows] for s in stats))
        if depth >= max_depth or rows.size < 2:
            continue
        cand = np.arange(d) if n_features_split >= d else np.sort(rng.choice(d, n_features_split, replace=False))
        best = (_MIN_GAIN, None, None)
        for f in cand:
            col = X[rows, f]
            order = np.argsort(col, kind="stable")
            xs = col[order]
            gain, pos = split_search(xs, *(s[rows][order] for s in stats))
            if gain > best[0]:
                best = (gain, f, _midpoint(xs[pos - 1], xs[pos]))
        if best[1] is None:
            continue
        _, f, t = best
        mask = X[rows, f] < t
        feat[node], thr[node] = int(f), float(t)
        l_id, r_id = new_node(), new_node()
        left[node], right[node] = l_id, r_id
        stack.append((r_id, rows[~mask], depth + 1))
        stack.append((l_id, rows[mask], depth + 1))
    return (np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64), np.array(value))


def _midpoint(lo: float, hi: float) -> float:
    mid = 0.5 * lo + 0.5 * hi
    return mid if lo < mid <= hi else hi


def _n_split_features(feature_subsample, d) -> int:
    if feature_subsample is None:
        return d
    if feature_subsample == "sqrt":
        return max(1, int(np.sqrt(d)))
    if isinstance(feature_subsample, float) and feature_subsample <= 1.0:
        return max(1, int(round(feature_subsample * d)))
    return max(1, min(d, int(feature_subsample)))


def class_weight_vector(y, class_weights=(0.7, 0.3)) -> np.ndarray:
    y = np.asarray(y)
    return np.where(y > 0, class_weights[0], class_weights[1]).astype(float)


def fit_tree(X, y, sample_weights=None, max_depth: int = 8, feature_subsample=None, seed: int = 0) -> DecisionTree:
    """Gini tree. Leaves hold the weighted majority class as 1.0 (illicit) or 0.0 (licit); ties go to licit."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"X must be a nonempty 2-D array, got shape {X.shape}")
    if y.shape != (X.shape[0],) or not np.isin(y, (-1, 1)).all():
        raise ValueError("y must hold one label in {-1, +1} per row")
    w = np.ones(X.shape[0]) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    pos_w = np.where(y > 0, w, 0.0)
    neg_w = np.where(y > 0, 0.0, w)
    rng = np.random.default_rng(seed)
    parts = _grow(X, _n_split_features(feature_subsample, X.shape[1]), max_depth, rng,
                  lambda p, n: float(p.sum() > n.sum()), _gini_best_split, (pos_w, neg_w))
    return DecisionTree(*parts, max_depth=max_depth, n_features=X.shape[1])


def fit_newton_tree(X, g, h, max_depth: int, l2_reg: float, feature_subsample=None, seed: int = 0) -> DecisionTree:
    """Regression tree on gradient/hessian pairs; leaf weight ``-sum(g) / (sum(h) + l2_reg)``."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    parts = _grow(X, _n_split_features(feature_subsample, X.shape[1]), max_depth, rng,
                  lambda gg, hh: float(-gg.sum() / (hh.sum() + l2_reg)),
                  lambda xs, gg, hh: _newton_best_split(xs, gg, hh, l2_reg), (g, h))
    return DecisionTree(*parts, max_depth=max_depth, n_features=X.shape[1])


# --------------------------------------------------------------------- forests


@dataclass
class ForestModel:
    kind: str                          # "random_forest" or "gbt"
    n_estimators: int
    n_features: int
    trees: list[DecisionTree] = field(default_factory=list)
    learning_rate: float = 1.0
    base_score: float = 0.0            # initial margin (gbt)
    train_loss: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"format": "amlgraph-forest v1", "kind": self.kind, "n_estimators": self.n_estimators,
                "n_features": self.n_features, "learning_rate": self.learning_rate,
                "base_score": self.base_score, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(d["kind"], d["n_estimators"], d["n_features"], [DecisionTree.from_dict(t) for t in d["trees"]],
                   d["learning_rate"], d["base_score"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def tree_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def fit_random_forest(X, y, n_estimators: int = 50, max_depth: int = 8, seed: int = 0,
                      class_weights=(0.7, 0.3), feature_subsample="sqrt") -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    w = class_weight_vector(y, class_weights) if class_weights else np.ones(len(y))
    model = ForestModel("random_forest", n_estimators, X.shape[1])
    for s in tree_seeds(seed, n_estimators):
        rng = np.random.default_rng(s)
        boot = rng.integers(0, X.shape[0], X.shape[0])
        model.trees.append(fit_tree(X[boot], y[boot], w[boot], max_depth, feature_subsample, seed=s))
    return model


def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


def logistic_loss(margin, y, w) -> float:
    t = (np.asarray(y) > 0).astype(float)
    # log(1 + e^m) - t m, stable
    return float(np.sum(w * (np.logaddexp(0.0, margin) - t * margin)) / np.sum(w))


def fit_gbt(X, y, n_estimators: int = 50, learning_rate: float = 0.3, max_depth: int = 4, l2_reg: float = 1.0,
            base_score: float = 0.0, class_weights=(0.7, 0.3), feature_subsample=None, seed: int = 0) -> ForestModel:
    """Additive logistic boosting with Newton leaf weights; ``base_score`` is the starting margin."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    t = (y > 0).astype(float)
    w = class_weight_vector(y, class_weights) if class_weights else np.ones(len(y))
    model = ForestModel("gbt", n_estimators, X.shape[1], learning_rate=learning_rate, base_score=base_score)
    margin = np.full(X.shape[0], float(base_score))
    model.train_loss.append(logistic_loss(margin, y, w))
    for s in tree_seeds(seed, n_estimators):
        p = _sigmoid(margin)
        g = w * (p - t)
        h = w * p * (1.0 - p)
        tree = fit_newton_tree(X, g, h, max_depth, l2_reg, feature_subsample, seed=s)
        model.trees.append(tree)
        margin = margin + learning_rate * tree.value[tree.apply(X)]
        model.train_loss.append(logistic_loss(margin, y, w))
    return model


def predict_scores(model: ForestModel, X) -> np.ndarray:
    """Random forest: fraction of trees voting illicit. GBT: sigmoid of the summed margin."""
    if not model.trees:
        raise FitError("model has no trees; fit it first")
    X = _check_width(X, model.n_features)
    if model.kind == "random_forest":
        votes = sum(t.predict(X) for t in model.trees)
        return votes / len(model.trees)
    margin = np.full(X.shape[0], model.base_score)
    for t in model.trees:
        margin = margin + model.learning_rate * t.predict(X)
    return _sigmoid(margin)
