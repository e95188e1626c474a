"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.

Criteria 2 and 3, and the full-data half of 9, need the public Elliptic csv files. Point
``AMLGRAPH_DATA`` at the directory that holds them; without it those checks are skipped
with a notice.
"""

import itertools
import json
import time

import numpy as np
import pytest

from amlgraph import autodiff as ad
from amlgraph import cli
from amlgraph.cp import CpGcnModel, CpLayerParams, cp_contract_reference, cp_pool_forward, \
    materialize_cp_tensor
from amlgraph.elliptic import DatasetSplit, build_timestep_graphs, load_dataset_dir, normalized_adjacency, \
    temporal_split
from amlgraph.errors import ConfigError
from amlgraph.gcn import GcnModel, parameter_count
from amlgraph.metrics import confusion, f_beta, report
from amlgraph.pipeline import ExperimentConfig, run_experiment, strip_timing
from amlgraph.qboost import build_qubo, qboost_objective, solve_brute_force, solve_simulated_annealing
from amlgraph.synthetic import make_synthetic_elliptic
from conftest import elliptic_data_dir, toy_graph


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, visible even when pytest captures output."""

    def emit(number, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"

    return emit


def skip_notice(number, name, capsys):
    msg = f"[criterion {number}] SKIP: {name} (set AMLGRAPH_DATA to the Elliptic csv directory to run it)"
    with capsys.disabled():
        print("\n" + msg)
    pytest.skip(msg)


# ---------------------------------------------------------------------------- 1


def test_criterion_1_parameter_efficiency(verdict):
    t0 = time.perf_counter()
    gcn, cp = parameter_count(GcnModel()), parameter_count(CpGcnModel())
    ratio = cp / gcn
    elapsed = time.perf_counter() - t0
    verdict(1, "CP-GCN / GCN parameter ratio <= 0.40, under 1 s", ratio <= 0.40 and elapsed < 1.0,
            f"{cp} / {gcn} = {ratio:.3f}, {elapsed:.3f} s")


# ------------------------------------------------------------------------- 2, 3

DATASET_KINDS = ("gcn", "cp-gcn", "rf", "qboost", "cp-gcn+rf")
F2_RANGES = {"gcn": (0.55, 0.67), "cp-gcn": (0.55, 0.67), "rf": (0.62, 0.74), "qboost": (0.66, 0.79),
             "cp-gcn+rf": (0.69, 0.81)}


@pytest.fixture(scope="module")
def full_results():
    data_dir = elliptic_data_dir()
    if data_dir is None:
        return None
    raw = load_dataset_dir(data_dir)
    graphs = build_timestep_graphs(raw)
    cache = {}
    t0 = time.perf_counter()
    docs = {k: run_experiment(ExperimentConfig(kind=k), raw, graphs, cache=cache) for k in DATASET_KINDS}
    return docs, graphs, time.perf_counter() - t0


@pytest.mark.dataset
def test_criterion_2_dataset_reproduction(full_results, verdict, capsys):
    if full_results is None:
        skip_notice(2, "five-seed F2 reproduction on the Elliptic data", capsys)
    docs, _, elapsed = full_results
    means = {k: d["aggregate"]["f2"][0] for k, d in docs.items()}
    ok = all(lo <= means[k] <= hi for k, (lo, hi) in F2_RANGES.items())
    detail = ", ".join(f"{k}={means[k]:.3f} in [{lo}, {hi}]" for k, (lo, hi) in F2_RANGES.items())
    verdict(2, "mean test F2 within the stated ranges", ok, f"{detail}; {elapsed / 60:.1f} min")


@pytest.mark.dataset
def test_criterion_3_ordering(full_results, verdict, capsys):
    if full_results is None:
        skip_notice(3, "hybrid and QBoost ordering on the Elliptic data", capsys)
    means = {k: d["aggregate"]["f2"][0] for k, d in full_results[0].items()}
    ok = means["cp-gcn+rf"] > means["cp-gcn"] and means["qboost"] >= means["rf"] - 0.02
    verdict(3, "CP-GCN+RF > CP-GCN and QBoost >= RF - 0.02", ok,
            f"cp-gcn+rf {means['cp-gcn+rf']:.3f} vs cp-gcn {means['cp-gcn']:.3f}; "
            f"qboost {means['qboost']:.3f} vs rf {means['rf']:.3f}")


# ---------------------------------------------------------------------------- 4


def test_criterion_4_gradients(verdict):
    g = toy_graph(seed=0)
    t0 = time.perf_counter()
    errors = {}
    # the oracle CP mode is checked in test_cp; the default models are the ones timed here
    for name, m in {"gcn": GcnModel(seed=1), "cp-gcn": CpGcnModel(seed=1)}.items():
        def loss(tape, store, m=m):
            return ad.weighted_cross_entropy(tape, m.forward(tape, g)[1], g.label)

        # step near the cube root of machine epsilon balances truncation and roundoff
        errors[name] = ad.finite_difference_check(loss, m.params, 1e-5)
    elapsed = time.perf_counter() - t0
    ok = max(errors.values()) < 1e-4 and elapsed < 10.0
    verdict(4, "finite-difference relative error < 1e-4 on a 6-node graph, under 10 s", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f", {elapsed:.2f} s")


# ---------------------------------------------------------------------------- 5


def star(k):
    if k == 1:
        return normalized_adjacency(1, np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    return normalized_adjacency(k, np.zeros(k - 1, dtype=int), np.arange(1, k))


def test_criterion_5_cp_oracle_equivalence(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d, R, k = (int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        p = CpLayerParams(rng.normal(size=(d, R)), rng.normal(size=R), rng.normal(size=(R, 3)),
                          rng.normal(size=3))
        H = rng.normal(size=(k, d))
        fast = cp_pool_forward(p, star(k), H, "oracle")[0]
        ref = cp_contract_reference(materialize_cp_tensor(p, k), [np.append(h, 1.0) for h in H]) + p.b_m
        worst = max(worst, float(np.max(np.abs(fast - ref))))
    elapsed = time.perf_counter() - t0
    verdict(5, "oracle CP pooling equals full tensor contraction within 1e-9, under 5 s",
            worst < 1e-9 and elapsed < 5.0, f"max diff {worst:.1e}, {elapsed:.2f} s")


# ---------------------------------------------------------------------------- 6


def test_criterion_6_qubo_and_solvers(verdict):
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        S, N = int(rng.integers(1, 40)), int(rng.integers(1, 13))
        H = np.where(rng.random((S, N)) < 0.5, 1, -1)
        y = np.where(rng.random(S) < 0.5, 1, -1)
        lam = float(rng.uniform(0, 2))
        w = rng.integers(0, 2, N)
        worst = max(worst, abs(build_qubo(H, y, lam).energy(w) - qboost_objective(H, y, w, lam)))
    ok_a = worst < 1e-9

    S = 10
    y = np.where(np.arange(S) % 2 == 0, 1, -1)
    w2, e2 = solve_brute_force(build_qubo(np.stack([y, -y], axis=1), y, 0.0))
    ok_b = tuple(w2) == (1, 0) and abs(e2 - 0.25 * S) < 1e-12

    matches, below = 0, 0
    for i in range(100):
        N = int(rng.integers(2, 16))
        S = int(rng.integers(5, 80))
        H = np.where(rng.random((S, N)) < 0.55, 1, -1)
        y = np.where(rng.random(S) < 0.5, 1, -1)
        q = build_qubo(H, y, float(rng.choice([0.0, 0.01, 0.05, 0.1, 0.5])) * S / N ** 2)
        _, e_bf = solve_brute_force(q)
        _, e_sa = solve_simulated_annealing(q, seed=i)
        matches += abs(e_sa - e_bf) <= 1e-9
        below += e_sa < e_bf - 1e-9
    ok_c = matches >= 95 and below == 0
    elapsed = time.perf_counter() - t0
    verdict(6, "QUBO faithfulness, N=2 example, annealing vs brute force, under 60 s",
            ok_a and ok_b and ok_c and elapsed < 60.0,
            f"(a) max diff {worst:.1e}; (b) w={tuple(int(v) for v in w2)} E={e2:g}; "
            f"(c) {matches}/100 matched, {below} below; {elapsed:.1f} s")


# ---------------------------------------------------------------------------- 7


def test_criterion_7_metric_identities(verdict):
    t0 = time.perf_counter()
    grid = [i / 20 for i in range(21)]
    f1_ok = all(f_beta(p, r, 1.0) == 2 * p * r / (p + r) for p, r in itertools.product(grid, grid) if p + r > 0)
    f2_ok = abs(f_beta(0.5, 1.0, 2.0) - 0.8333333333333334) < 1e-9
    degenerate = [report((0, 0, 0, 10), 0.5), report((0, 0, 5, 5), 0.5), report((0, 5, 0, 5), 0.5),
                  report(confusion(np.zeros(4, bool), np.zeros(4, bool)), 0.5)]
    zero_ok = all(r.precision == r.recall == r.f1 == r.f2 == 0.0 for r in degenerate)
    elapsed = time.perf_counter() - t0
    verdict(7, "F1 identity, F2(0.5, 1.0) = 0.8333, zero-division conventions, under 1 s",
            f1_ok and f2_ok and zero_ok and elapsed < 1.0, f"{elapsed * 1000:.1f} ms")


# ---------------------------------------------------------------------------- 8


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    return make_synthetic_elliptic(tmp_path_factory.mktemp("accept"), n_steps=6, nodes_per_step=40, seed=11)


def test_criterion_8_determinism(small_data, tmp_path, verdict):
    split = ["--train-steps", "1-3", "--val-steps", "4", "--test-steps", "5-6"]
    mismatched = []
    for kind in cli.MODEL_KINDS:
        argv = ["train", "--data-dir", str(small_data), "--kind", kind, "--seeds", "0,1", "--epochs", "10",
                "--n-estimators", "8", "--out-dir", str(tmp_path), *split]
        path = tmp_path / f"result_{kind.replace('+', '_')}.json"
        docs = []
        for _ in range(2):
            assert cli.main(argv) == 0
            docs.append(strip_timing(json.loads(path.read_text())))
        if docs[0] != docs[1]:
            mismatched.append(kind)
    verdict(8, "repeated train runs give identical metric fields for every model kind", not mismatched,
            f"mismatched: {mismatched}" if mismatched else f"{len(cli.MODEL_KINDS)} kinds checked")


# ---------------------------------------------------------------------------- 9


def test_criterion_9_split_integrity(tmp_path, verdict, capsys):
    try:
        DatasetSplit((1, 2, 3), (3, 4), (5,))
        overlap_ok = False
    except ConfigError:
        overlap_ok = True
    # 49 steps in the real file layout; the counts depend only on which steps exist
    layout = make_synthetic_elliptic(tmp_path, n_steps=49, nodes_per_step=4, seed=0)
    counts = tuple(len(p) for p in temporal_split(build_timestep_graphs(load_dataset_dir(layout)), DatasetSplit()))
    detail = f"49-step layout {counts}, overlap rejected={overlap_ok}"
    data_dir = elliptic_data_dir()
    full_ok = True
    if data_dir is not None:
        full = tuple(len(p) for p in temporal_split(build_timestep_graphs(load_dataset_dir(data_dir)), DatasetSplit()))
        full_ok = full == (29, 5, 15)
        detail += f", Elliptic data {full}"
    verdict(9, "default split gives (29, 5, 15) graphs and overlapping ranges are rejected",
            overlap_ok and counts == (29, 5, 15) and full_ok, detail)
    if data_dir is None:
        with capsys.disabled():
            print("[criterion 9] NOTE: full-data graph count not checked (AMLGRAPH_DATA unset)")
