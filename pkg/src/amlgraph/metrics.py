"""Confusion counts and precision / recall / F-beta with illicit as the positive class."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    f2: float
    threshold: float

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    def __add__(self, other: "MetricsReport") -> "MetricsReport":
        counts = (self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)
        return report(counts, self.threshold)


def _as_bool(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype == bool:
        return a
    return a > 0


def confusion(pred, truth) -> tuple[int, int, int, int]:
    """Counts (tp, fp, fn, tn). Inputs are booleans or signed labels, positive = illicit."""
    p = _as_bool(pred)
    t = _as_bool(truth)
    if p.shape != t.shape:
        raise ShapeError(f"pred has shape {p.shape}, truth has shape {t.shape}")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    tn = int(np.sum(~p & ~t))
    return tp, fp, fn, tn


def f_beta(precision: float, recall: float, beta: float) -> float:
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        return 0.0
    return (1 + b2) * precision * recall / denom


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


def report(counts, threshold: float) -> MetricsReport:
    tp, fp, fn, tn = (int(c) for c in counts)
    if min(tp, fp, fn, tn) < 0:
        raise ValueError(f"negative confusion count in {counts}")
    p, r = precision_recall(tp, fp, fn)
    return MetricsReport(tp, fp, fn, tn, p, r, f_beta(p, r, 1.0), f_beta(p, r, 2.0), float(threshold))


def format_table(rows: list[dict], columns: list[tuple[str, str]]) -> str:
    """Render rows as an aligned plain-text table. Values are printed as given, never recomputed."""
    header = [title for _, title in columns]
    body = [[_fmt(row.get(key)) for key, _ in columns] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    line = "+".join("-" * (w + 2) for w in widths)
    out = ["| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |", "|" + line + "|"]
    for r in body:
        out.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
    return "\n".join(out)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if isinstance(v, (tuple, list)) and len(v) == 2:
        mean, std = v
        if std is None:
            return _fmt(mean)
        return f"{_fmt(mean)} ± {_fmt(std)}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if float(v).is_integer() and abs(v) >= 10:
        return str(int(v))
    return f"{float(v):.3f}"
