import os
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from amlgraph.elliptic import TimeStepGraph, load_dataset_dir, normalized_adjacency
from amlgraph.synthetic import make_synthetic_elliptic

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def tiny_dir():
    return FIXTURES / "elliptic_tiny"


@pytest.fixture
def tiny_raw(tiny_dir):
    return load_dataset_dir(tiny_dir)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    return make_synthetic_elliptic(tmp_path_factory.mktemp("synthetic"), n_steps=6, nodes_per_step=40, seed=3)


def toy_graph(seed=0, n=6, d=93, step=1, edges=((0, 1), (1, 2), (3, 4), (4, 5), (2, 3)), noise=1.0):
    """Six nodes, labels separable by the sign of feature 0; ``noise`` scales the other features."""
    rng = np.random.default_rng(seed)
    X = noise * rng.normal(size=(n, d))
    label = np.array([1, -1, 1, -1, 1, -1][:n], dtype=np.int8)
    X[:, 0] = 2.0 * label + 0.1 * rng.normal(size=n)
    src = np.array([e[0] for e in edges])
    dst = np.array([e[1] for e in edges])
    return TimeStepGraph(step, normalized_adjacency(n, src, dst), X, label, np.arange(n) + 100 * step)


@pytest.fixture
def toy():
    return toy_graph()


def identity_graph(X, label, step=1):
    n = X.shape[0]
    return TimeStepGraph(step, sp.identity(n, format="csr"), X, np.asarray(label, dtype=np.int8), np.arange(n))


def elliptic_data_dir():
    d = os.environ.get("AMLGRAPH_DATA")
    if d and (Path(d) / "elliptic_txs_features.csv").is_file():
        return Path(d)
    return None
