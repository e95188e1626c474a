"""Elliptic-format loading, per-time-step graph construction and temporal splits.

File layout (comma separated):

* features: no header; ``id, time_step, f1 .. f165``
* edges: header ``txId1,txId2``; one ``source,target`` pair per row
* labels: header ``txId,class``; class is ``1`` (illicit), ``2`` (licit) or ``unknown``

Columns ``f1..f93`` are the local features, ``f94..f165`` the aggregated ones.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, IntegrityError, ParseError

N_RAW_COLUMNS = 166  # time_step + 165 features
N_LOCAL = 93
N_AGGREGATED = 72
T_MAX = 49

ILLICIT, LICIT, UNLABELED = 1, -1, 0
_CLASS_CODES = {"1": ILLICIT, "2": LICIT, "unknown": UNLABELED}

FEATURE_MODES = ("local_93", "all_166")

DEFAULT_FILES = {
    "features": "elliptic_txs_features.csv",
    "edges": "elliptic_txs_edgelist.csv",
    "labels": "elliptic_txs_classes.csv",
}


@dataclass(frozen=True)
class RawDataset:
    node_ids: np.ndarray      # (N,) int64
    time_step: np.ndarray     # (N,) int64
    features: np.ndarray      # (N, 166): time_step then f1..f165, file order
    labels: np.ndarray        # (N,) int8 in {+1, -1, 0}
    edges: np.ndarray         # (E, 2) int64 global ids

    @property
    def n_nodes(self) -> int:
        return int(self.node_ids.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def index_of(self) -> dict[int, int]:
        return {int(n): i for i, n in enumerate(self.node_ids)}


@dataclass(frozen=True)
class TimeStepGraph:
    step: int
    adjacency_norm: sp.csr_matrix  # (S, S) symmetric D^-1/2 (A+I) D^-1/2
    features: np.ndarray           # (S, d)
    label: np.ndarray              # (S,) +1 / -1 / 0, as seen by training
    node_index: np.ndarray         # (S,) local row -> global node id
    true_label: np.ndarray = field(default=None)  # labels before any masking

    def __post_init__(self):
        if self.true_label is None:
            object.__setattr__(self, "true_label", self.label.copy())

    @property
    def n_nodes(self) -> int:
        return int(self.node_index.shape[0])

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency_norm.toarray()


@dataclass(frozen=True)
class DatasetSplit:
    train_steps: tuple[int, ...] = tuple(range(1, 30))
    val_steps: tuple[int, ...] = tuple(range(30, 35))
    test_steps: tuple[int, ...] = tuple(range(35, 50))

    def __post_init__(self):
        for name in ("train_steps", "val_steps", "test_steps"):
            object.__setattr__(self, name, tuple(int(s) for s in getattr(self, name)))
        seen: dict[int, str] = {}
        for name in ("train_steps", "val_steps", "test_steps"):
            for s in getattr(self, name):
                if s in seen:
                    raise ConfigError(f"time step {s} appears in both {seen[s]} and {name}")
                seen[s] = name

    @classmethod
    def parse(cls, train: str, val: str, test: str) -> "DatasetSplit":
        return cls(parse_steps(train), parse_steps(val), parse_steps(test))

    def all_steps(self) -> tuple[int, ...]:
        return tuple(sorted(self.train_steps + self.val_steps + self.test_steps))

    def part_of(self, step: int) -> str | None:
        for name, steps in (("train", self.train_steps), ("val", self.val_steps), ("test", self.test_steps)):
            if step in steps:
                return name
        return None

    def to_dict(self) -> dict:
        return {"train": list(self.train_steps), "val": list(self.val_steps), "test": list(self.test_steps)}


def parse_steps(text: str) -> tuple[int, ...]:
    """``"1-29"`` -> (1..29); ``"1,3,5-7"`` -> (1,3,5,6,7); ``""`` -> ()."""
    steps: list[int] = []
    for chunk in text.replace(" ", "").split(","):
        if not chunk:
            continue
        lo, sep, hi = chunk.partition("-")
        try:
            if sep:
                steps.extend(range(int(lo), int(hi) + 1))
            else:
                steps.append(int(lo))
        except ValueError as exc:
            raise ConfigError(f"bad step range {chunk!r}") from exc
    return tuple(steps)


# --------------------------------------------------------------------- loading


def _read_features(path: Path) -> np.ndarray:
    try:
        table = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError:
        _locate_bad_feature_row(path)
        raise
    if table.shape[1] != N_RAW_COLUMNS + 1:
        raise ParseError(path, 1, f"expected {N_RAW_COLUMNS + 1} columns, got {table.shape[1]}")
    return table


def _locate_bad_feature_row(path: Path) -> None:
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if len(row) != N_RAW_COLUMNS + 1:
                raise ParseError(path, lineno, f"expected {N_RAW_COLUMNS + 1} columns, got {len(row)}")
            try:
                [float(x) for x in row]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc


def _read_pairs(path: Path) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)  # header
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(path, lineno, f"expected 2 columns, got {len(row)}")
            rows.append((lineno, [c.strip() for c in row]))
    return rows


def load_dataset(features_path, edges_path, labels_path) -> RawDataset:
    features_path, edges_path, labels_path = Path(features_path), Path(edges_path), Path(labels_path)
    for p in (features_path, edges_path, labels_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing input file: {p}")

    table = _read_features(features_path)
    node_ids = table[:, 0].astype(np.int64)
    if len(np.unique(node_ids)) != len(node_ids):
        raise IntegrityError(f"{features_path}: duplicate transaction ids")
    time_step = table[:, 1].astype(np.int64)
    features = np.ascontiguousarray(table[:, 1:])
    index = {int(n): i for i, n in enumerate(node_ids)}

    labels = np.zeros(len(node_ids), dtype=np.int8)
    for lineno, (tx, cls) in _read_pairs(labels_path):
        try:
            i = index[int(tx)]
        except ValueError as exc:
            raise ParseError(labels_path, lineno, f"bad id {tx!r}") from exc
        except KeyError as exc:
            raise IntegrityError(f"{labels_path}:{lineno}: id {tx} not in features file") from exc
        if cls not in _CLASS_CODES:
            raise ParseError(labels_path, lineno, f"unknown class {cls!r}")
        labels[i] = _CLASS_CODES[cls]

    edges = []
    for lineno, (a, b) in _read_pairs(edges_path):
        try:
            ia, ib = int(a), int(b)
        except ValueError as exc:
            raise ParseError(edges_path, lineno, f"bad id in {a!r},{b!r}") from exc
        for end in (ia, ib):
            if end not in index:
                raise IntegrityError(f"{edges_path}:{lineno}: dangling edge endpoint {end}")
        edges.append((ia, ib))
    edge_arr = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return RawDataset(node_ids, time_step, features, labels, edge_arr)


def load_dataset_dir(data_dir) -> RawDataset:
    d = Path(data_dir)
    return load_dataset(d / DEFAULT_FILES["features"], d / DEFAULT_FILES["edges"], d / DEFAULT_FILES["labels"])


def select_features(raw: RawDataset, mode: str) -> np.ndarray:
    """``local_93``: f1..f93. ``all_166``: f1..f165 followed by time_step, so local is a prefix."""
    if mode == "local_93":
        return raw.features[:, 1:1 + N_LOCAL]
    if mode == "all_166":
        return np.concatenate([raw.features[:, 1:], raw.features[:, :1]], axis=1)
    raise ConfigError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")


# ------------------------------------------------------------- graph building


def normalized_adjacency(n: int, src: np.ndarray, dst: np.ndarray) -> sp.csr_matrix:
    """Symmetrize, drop explicit self-loops, add I, then D^-1/2 (A+I) D^-1/2."""
    keep = src != dst
    src, dst = src[keep], dst[keep]
    rows = np.concatenate([src, dst, np.arange(n)])
    cols = np.concatenate([dst, src, np.arange(n)])
    a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    a.data[:] = 1.0  # duplicate edges collapse to a single link
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    out = (d @ a @ d).tocsr()
    out.sort_indices()
    return out


def build_timestep_graphs(raw: RawDataset, mode: str = "local_93") -> list[TimeStepGraph]:
    X = select_features(raw, mode)
    index = raw.index_of()
    steps = np.unique(raw.time_step)
    local = np.empty(raw.n_nodes, dtype=np.int64)
    members = {}
    for s in steps:
        rows = np.flatnonzero(raw.time_step == s)
        local[rows] = np.arange(rows.size)
        members[int(s)] = rows

    if raw.n_edges:
        gi = np.array([index[int(a)] for a in raw.edges[:, 0]])
        gj = np.array([index[int(b)] for b in raw.edges[:, 1]])
        cross = raw.time_step[gi] != raw.time_step[gj]
        if cross.any():
            k = int(np.flatnonzero(cross)[0])
            raise IntegrityError(
                f"edge {raw.edges[k, 0]}->{raw.edges[k, 1]} crosses time steps "
                f"{raw.time_step[gi[k]]} and {raw.time_step[gj[k]]}")
        edge_step = raw.time_step[gi]
    else:
        gi = gj = edge_step = np.zeros(0, dtype=np.int64)

    graphs = []
    for s, rows in members.items():
        sel = edge_step == s
        adj = normalized_adjacency(rows.size, local[gi[sel]], local[gj[sel]])
        graphs.append(TimeStepGraph(
            step=s,
            adjacency_norm=adj,
            features=np.ascontiguousarray(X[rows]),
            label=raw.labels[rows].copy(),
            node_index=raw.node_ids[rows].copy(),
        ))
    return graphs


def temporal_split(graphs: list[TimeStepGraph], split: DatasetSplit):
    train, val, test = [], [], []
    for g in graphs:
        part = split.part_of(g.step)
        if part is None:
            raise ConfigError(f"time step {g.step} is not covered by the split")
        {"train": train, "val": val, "test": test}[part].append(g)
    return train, val, test


def mask_label_fraction(graphs: list[TimeStepGraph], fraction: float, seed: int) -> list[TimeStepGraph]:
    """Hide ``floor(fraction * L)`` of the ``L`` labeled nodes, chosen uniformly with ``seed``."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"mask fraction must lie in [0, 1], got {fraction}")
    labeled = [(gi, r) for gi, g in enumerate(graphs) for r in np.flatnonzero(g.label != UNLABELED)]
    n_mask = int(np.floor(fraction * len(labeled)))
    if n_mask == 0:
        return list(graphs)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(labeled), size=n_mask, replace=False)
    new_labels = [g.label.copy() for g in graphs]
    for k in chosen:
        gi, r = labeled[k]
        new_labels[gi][r] = UNLABELED
    return [replace(g, label=lab, true_label=g.true_label) for g, lab in zip(graphs, new_labels)]


# ---------------------------------------------------------------- graph bundle


BUNDLE_VERSION = 1


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _arrays_checksum(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        a = np.ascontiguousarray(arrays[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _bundle_arrays(raw: RawDataset, graphs: list[TimeStepGraph]) -> dict[str, np.ndarray]:
    arrays = {
        "raw/node_ids": raw.node_ids, "raw/time_step": raw.time_step,
        "raw/features": raw.features, "raw/labels": raw.labels, "raw/edges": raw.edges,
    }
    for g in graphs:
        p = f"g{g.step}/"
        arrays[p + "indptr"] = g.adjacency_norm.indptr
        arrays[p + "indices"] = g.adjacency_norm.indices
        arrays[p + "data"] = g.adjacency_norm.data
        arrays[p + "features"] = g.features
        arrays[p + "label"] = g.label
        arrays[p + "node_index"] = g.node_index
    return arrays


def save_bundle(out_dir, raw: RawDataset, graphs: list[TimeStepGraph], split: DatasetSplit,
                sources: dict[str, str], mode: str = "local_93") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = _bundle_arrays(raw, graphs)
    manifest = {
        "bundle_version": BUNDLE_VERSION,
        "feature_mode": mode,
        "sources": sources,
        "steps": [g.step for g in graphs],
        "split": split.to_dict(),
        "checksum": _arrays_checksum(arrays),
    }
    np.savez(out / "bundle.npz", **{k.replace("/", "__"): v for k, v in arrays.items()})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_bundle(bundle_dir) -> tuple[RawDataset, list[TimeStepGraph], dict]:
    d = Path(bundle_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("bundle_version") != BUNDLE_VERSION:
        raise ConfigError(f"{d}: unsupported bundle version {manifest.get('bundle_version')}")
    with np.load(d / "bundle.npz") as z:
        arrays = {k.replace("__", "/"): z[k] for k in z.files}
    raw = RawDataset(arrays["raw/node_ids"], arrays["raw/time_step"], arrays["raw/features"],
                     arrays["raw/labels"], arrays["raw/edges"])
    graphs = []
    for s in manifest["steps"]:
        p = f"g{s}/"
        n = arrays[p + "node_index"].shape[0]
        adj = sp.csr_matrix((arrays[p + "data"], arrays[p + "indices"], arrays[p + "indptr"]), shape=(n, n))
        graphs.append(TimeStepGraph(s, adj, arrays[p + "features"], arrays[p + "label"], arrays[p + "node_index"]))
    return raw, graphs, manifest
