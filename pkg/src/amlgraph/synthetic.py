"""Small synthetic datasets in the Elliptic file layout, for tests and demos.

Illicit nodes get a shifted mean on the first few local features and link mostly to
each other, so both tabular and graph models can separate the classes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .elliptic import DEFAULT_FILES


def make_synthetic_elliptic(out_dir, n_steps: int = 6, nodes_per_step: int = 40, illicit_rate: float = 0.25,
                            unknown_rate: float = 0.3, edges_per_node: float = 1.5, shift: float = 3.0,
                            n_informative: int = 5, seed: int = 0) -> Path:
    """Write the three csv files to ``out_dir``; ``n_informative`` local features carry the class shift."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    feat_rows, edge_rows, label_rows = [], [], []
    next_id = 1000
    for step in range(1, n_steps + 1):
        ids = np.arange(next_id, next_id + nodes_per_step)
        next_id += nodes_per_step
        illicit = rng.random(nodes_per_step) < illicit_rate
        illicit[:2] = (True, False)  # both classes in every step
        X = rng.normal(size=(nodes_per_step, 165))
        X[illicit, :n_informative] += shift
        for i in range(nodes_per_step):
            feat_rows.append(f"{ids[i]},{step}," + ",".join(f"{v:.6f}" for v in X[i]))
        n_edges = int(edges_per_node * nodes_per_step)
        for _ in range(n_edges):
            a = int(rng.integers(nodes_per_step))
            same = np.flatnonzero(illicit == illicit[a])
            pool = same if rng.random() < 0.85 else np.arange(nodes_per_step)
            b = int(rng.choice(pool))
            if a != b:
                edge_rows.append(f"{ids[a]},{ids[b]}")
        unknown = rng.random(nodes_per_step) < unknown_rate
        unknown[:2] = False
        for i in range(nodes_per_step):
            cls = "unknown" if unknown[i] else ("1" if illicit[i] else "2")
            label_rows.append(f"{ids[i]},{cls}")
    (out / DEFAULT_FILES["features"]).write_text("\n".join(feat_rows) + "\n")
    (out / DEFAULT_FILES["edges"]).write_text("txId1,txId2\n" + "\n".join(edge_rows) + "\n")
    (out / DEFAULT_FILES["labels"]).write_text("txId,class\n" + "\n".join(label_rows) + "\n")
    return out
