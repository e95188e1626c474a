import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amlgraph import elliptic
from amlgraph.elliptic import (DatasetSplit, build_timestep_graphs, load_dataset_dir,
                               mask_label_fraction, normalized_adjacency, select_features, temporal_split)
from amlgraph.errors import ConfigError, IntegrityError, ParseError
from conftest import toy_graph


def test_load_tiny_fixture(tiny_raw):
    assert tiny_raw.n_nodes == 4
    assert tiny_raw.n_edges == 2
    assert tiny_raw.features.shape == (4, 166)
    assert list(tiny_raw.labels) == [1, -1, 0, -1]
    assert list(tiny_raw.time_step) == [1, 1, 2, 2]


def _copy_fixture(tiny_dir, tmp_path):
    for name in elliptic.DEFAULT_FILES.values():
        (tmp_path / name).write_text((tiny_dir / name).read_text())
    return tmp_path


def test_dangling_edge_is_integrity_error(tiny_dir, tmp_path):
    d = _copy_fixture(tiny_dir, tmp_path)
    (d / "elliptic_txs_edgelist.csv").write_text("txId1,txId2\n101,102\n203,999\n")
    with pytest.raises(IntegrityError, match="999"):
        load_dataset_dir(d)


def test_wrong_column_count_names_line(tiny_dir, tmp_path):
    d = _copy_fixture(tiny_dir, tmp_path)
    lines = (d / "elliptic_txs_features.csv").read_text().splitlines()
    lines[2] = lines[2].rsplit(",", 1)[0]
    (d / "elliptic_txs_features.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_dataset_dir(d)
    assert info.value.line == 3


def test_bad_edge_row_names_line(tiny_dir, tmp_path):
    d = _copy_fixture(tiny_dir, tmp_path)
    (d / "elliptic_txs_edgelist.csv").write_text("txId1,txId2\n101,102\n203,204,7\n")
    with pytest.raises(ParseError) as info:
        load_dataset_dir(d)
    assert info.value.line == 3


def test_cross_step_edge_rejected(tiny_dir, tmp_path):
    d = _copy_fixture(tiny_dir, tmp_path)
    (d / "elliptic_txs_edgelist.csv").write_text("txId1,txId2\n101,203\n")
    raw = load_dataset_dir(d)
    with pytest.raises(IntegrityError, match="crosses"):
        build_timestep_graphs(raw)


def test_two_node_normalization():
    a = normalized_adjacency(2, np.array([0]), np.array([1])).toarray()
    assert np.allclose(a, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_isolated_node_block_is_one():
    a = normalized_adjacency(3, np.array([0]), np.array([1])).toarray()
    assert a[2, 2] == 1.0
    assert a[2, :2].sum() == 0 and a[:2, 2].sum() == 0


def test_graphs_per_step(tiny_raw):
    graphs = build_timestep_graphs(tiny_raw)
    assert [g.step for g in graphs] == [1, 2]
    assert sum(g.n_nodes for g in graphs) == tiny_raw.n_nodes
    assert graphs[0].features.shape == (2, 93)
    assert list(graphs[1].node_index) == [203, 204]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)), max_size=30))
def test_adjacency_invariants(n, pairs):
    pairs = [(a % n, b % n) for a, b in pairs]
    src = np.array([p[0] for p in pairs], dtype=int)
    dst = np.array([p[1] for p in pairs], dtype=int)
    a = normalized_adjacency(n, src, dst).toarray()
    assert np.max(np.abs(a - a.T)) <= 1e-12
    assert np.all(np.diag(a) > 0)
    nz = a[a != 0]
    assert np.all((nz > 0) & (nz <= 1))
    # entry-wise definition against a dense recomputation
    A = np.zeros((n, n))
    for s, d in zip(src, dst):
        if s != d:
            A[s, d] = A[d, s] = 1
    A += np.eye(n)
    deg = A.sum(axis=1)
    assert np.allclose(a, A / np.sqrt(np.outer(deg, deg)), atol=1e-15)


def test_select_features(tiny_raw):
    local = select_features(tiny_raw, "local_93")
    full = select_features(tiny_raw, "all_166")
    assert local.shape[1] == 93 and full.shape[1] == 166
    assert np.array_equal(full[:, :93], local)
    assert np.array_equal(full[:, -1], tiny_raw.time_step)
    with pytest.raises(ConfigError):
        select_features(tiny_raw, "all")


def _fake_graphs(steps):
    return [toy_graph(step=s) for s in steps]


def test_default_split_sizes():
    train, val, test = temporal_split(_fake_graphs(range(1, 50)), DatasetSplit())
    assert (len(train), len(val), len(test)) == (29, 5, 15)
    assert 43 in [g.step for g in test]
    assert [g.step for g in train] == list(range(1, 30))


def test_degenerate_split():
    graphs = _fake_graphs(range(1, 50))
    train, val, test = temporal_split(graphs, DatasetSplit(range(1, 50), (), ()))
    assert len(train) == 49 and not val and not test


def test_overlapping_split_rejected():
    with pytest.raises(ConfigError):
        DatasetSplit(range(1, 31), range(30, 35), range(35, 50))


def test_uncovered_step_rejected():
    with pytest.raises(ConfigError):
        temporal_split(_fake_graphs([1, 2, 50]), DatasetSplit())


def test_parse_steps():
    assert elliptic.parse_steps("1-3,7") == (1, 2, 3, 7)
    assert elliptic.parse_steps("") == ()


def _labeled(graphs):
    return sum(int(np.sum(g.label != 0)) for g in graphs)


def test_mask_fraction_examples():
    graphs = [toy_graph(step=1), toy_graph(step=2)]
    assert mask_label_fraction(graphs, 0.0, 1) == graphs
    assert _labeled(mask_label_fraction(graphs, 1.0, 1)) == 0
    ten = [toy_graph(step=1, n=6), toy_graph(step=2, n=4, edges=((0, 1),))]
    assert _labeled(ten) == 10
    a = mask_label_fraction(ten, 0.5, seed=9)
    b = mask_label_fraction(ten, 0.5, seed=9)
    assert _labeled(a) == 5
    assert all(np.array_equal(x.label, y.label) for x, y in zip(a, b))
    assert all(np.array_equal(x.true_label, y.label) for x, y in zip(a, ten))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_mask_fraction_count(f, seed):
    graphs = [toy_graph(step=s) for s in (1, 2, 3)]
    L = _labeled(graphs)
    assert abs(_labeled(mask_label_fraction(graphs, f, seed)) - (1 - f) * L) <= 1


def test_mask_fraction_range():
    with pytest.raises(ConfigError):
        mask_label_fraction([toy_graph()], 1.5, 0)


def test_rebuild_is_byte_identical(tiny_dir):
    g1 = build_timestep_graphs(load_dataset_dir(tiny_dir))
    g2 = build_timestep_graphs(load_dataset_dir(tiny_dir))
    for a, b in zip(g1, g2):
        assert a.adjacency_norm.data.tobytes() == b.adjacency_norm.data.tobytes()
        assert a.features.tobytes() == b.features.tobytes()


def test_bundle_roundtrip(tiny_raw, tmp_path):
    graphs = build_timestep_graphs(tiny_raw)
    m = elliptic.save_bundle(tmp_path / "b", tiny_raw, graphs, DatasetSplit(), {"features": "x"})
    raw2, graphs2, m2 = elliptic.load_bundle(tmp_path / "b")
    assert m == m2
    assert np.array_equal(raw2.features, tiny_raw.features)
    for a, b in zip(graphs, graphs2):
        assert (a.adjacency_norm != b.adjacency_norm).nnz == 0
        assert np.array_equal(a.label, b.label)
