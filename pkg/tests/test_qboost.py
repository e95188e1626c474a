import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amlgraph.errors import CapacityError, FitError, ShapeError
from amlgraph.qboost import (QBoostModel, QuboProblem, WeakLearnerPool, build_pool, build_qubo, fit,
                             predict_scores, qboost_objective, solve, solve_brute_force,
                             solve_simulated_annealing)
from amlgraph.trainer import best_f_beta
from amlgraph.trees import DecisionTree, LEAF


def random_pool(rng, S, N):
    return np.where(rng.random((S, N)) < 0.5, 1, -1), np.where(rng.random(S) < 0.5, 1, -1)


def enumerate_min(q):
    """Independent oracle: all assignments, smallest integer encoding among ties."""
    best = None
    for k in range(1 << q.n):
        w = np.array([(k >> i) & 1 for i in range(q.n)])
        e = q.energy(w)
        if best is None or e < best[1] - 1e-12:
            best = (w, e)
    return best


# --------------------------------------------------------------------------- QUBO


def test_qubo_matches_direct_objective():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        S, N = int(rng.integers(1, 30)), int(rng.integers(1, 13))
        H, y = random_pool(rng, S, N)
        lam = float(rng.uniform(0, 2))
        w = rng.integers(0, 2, N)
        q = build_qubo(H, y, lam)
        worst = max(worst, abs(q.energy(w) - qboost_objective(H, y, w, lam)))
    assert worst < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 8), st.floats(0, 5), st.integers(0, 2**32 - 1))
def test_qubo_faithful_property(S, N, lam, seed):
    rng = np.random.default_rng(seed)
    H, y = random_pool(rng, S, N)
    q = build_qubo(H, y, lam)
    assert np.array_equal(q.Q, q.Q.T)
    for w in itertools.islice(itertools.product((0, 1), repeat=N), 64):
        assert q.energy(w) == pytest.approx(qboost_objective(H, y, w, lam), abs=1e-9)


@pytest.mark.parametrize("S", [1, 4, 10])
def test_two_learner_example(S):
    y = np.where(np.arange(S) % 2 == 0, 1, -1)
    H = np.stack([y, -y], axis=1)
    q = build_qubo(H, y, 0.0)
    energies = {w: q.energy(w) for w in itertools.product((0, 1), repeat=2)}
    assert energies == pytest.approx({(0, 0): S, (1, 0): 0.25 * S, (0, 1): 2.25 * S, (1, 1): S})
    w, e = solve_brute_force(q)
    assert tuple(w) == (1, 0) and e == pytest.approx(0.25 * S)


def test_empty_selection_energy_is_offset():
    rng = np.random.default_rng(1)
    H, y = random_pool(rng, 12, 5)
    q = build_qubo(H, y, 0.3)
    assert q.energy(np.zeros(5)) == q.offset == float(np.sum(y ** 2))


def test_qubo_shape_checks():
    with pytest.raises(ShapeError):
        build_qubo(np.ones((3, 2)), np.ones(4), 0.0)
    with pytest.raises(ValueError):
        QuboProblem([[0.0, 1.0], [0.0, 0.0]])


def test_monotone_sparsity():
    rng = np.random.default_rng(2)
    for _ in range(20):
        S, N = 40, int(rng.integers(2, 13))
        H, y = random_pool(rng, S, N)
        counts = [int(solve_brute_force(build_qubo(H, y, lam))[0].sum()) for lam in np.linspace(0, 3 * S / N, 12)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_huge_lambda_selects_nothing():
    rng = np.random.default_rng(3)
    H, y = random_pool(rng, 20, 6)
    w, e = solve_brute_force(build_qubo(H, y, 1e6))
    assert w.sum() == 0 and e == 20


def test_qubo_text_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    H, y = random_pool(rng, 9, 4)
    q = build_qubo(H, y, 0.1)
    q.save(tmp_path / "q.txt")
    lines = (tmp_path / "q.txt").read_text().splitlines()
    assert lines[1] == "4" and len(lines) == 2 + 10
    back = QuboProblem.load(tmp_path / "q.txt")
    assert np.array_equal(back.Q, q.Q) and back.offset == q.offset


# ------------------------------------------------------------------------ solvers


@pytest.mark.parametrize("c,expected", [(2.0, 0), (-2.0, 1), (0.0, 0)])
def test_brute_force_single_variable(c, expected):
    w, e = solve_brute_force(QuboProblem([[c]], 1.0))
    assert w.tolist() == [expected] and e == 1.0 + c * expected


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**32 - 1), st.booleans())
def test_brute_force_matches_enumeration(n, seed, integer):
    rng = np.random.default_rng(seed)
    A = rng.integers(-3, 4, (n, n)).astype(float) if integer else rng.normal(size=(n, n))
    q = QuboProblem(A + A.T)
    w, e = solve_brute_force(q)
    ref_w, ref_e = enumerate_min(q)
    assert e == pytest.approx(ref_e, abs=1e-9)
    assert np.array_equal(w, ref_w)  # integer ties resolve to the smallest encoding


def test_brute_force_capacity():
    with pytest.raises(CapacityError):
        solve_brute_force(QuboProblem(np.zeros((23, 23))))


def test_annealing_matches_brute_force():
    rng = np.random.default_rng(5)
    matches = 0
    for i in range(100):
        n = int(rng.integers(2, 16))
        H, y = random_pool(rng, int(rng.integers(5, 60)), n)
        q = build_qubo(H, y, float(rng.uniform(0, 1)) * H.shape[0] / n ** 2)
        _, e_bf = solve_brute_force(q)
        _, e_sa = solve_simulated_annealing(q, seed=i)
        assert e_sa >= e_bf - 1e-9
        matches += abs(e_sa - e_bf) <= 1e-9
    assert matches >= 95


def test_annealing_zero_matrix_and_determinism():
    w, e = solve_simulated_annealing(QuboProblem(np.zeros((4, 4)), 2.5))
    assert e == 2.5 and w.shape == (4,)
    rng = np.random.default_rng(6)
    A = rng.normal(size=(30, 30))
    q = QuboProblem(A + A.T)
    a = solve_simulated_annealing(q, sweeps=200, restarts=3, seed=11)
    b = solve_simulated_annealing(q, sweeps=200, restarts=3, seed=11)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]
    with pytest.raises(ValueError):
        solve_simulated_annealing(q, sweeps=0)


def test_solve_dispatch():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(30, 30))
    q = QuboProblem(A + A.T)
    w, e = solve(q, seed=1, sweeps=300, restarts=2)
    assert w.shape == (30,) and e == pytest.approx(q.energy(w))


# --------------------------------------------------------------------------- fit


def stump(feature, threshold, n_features, flip=False):
    """Depth-1 tree voting illicit when x[feature] >= threshold (or below it when flipped)."""
    lo, hi = (1.0, 0.0) if flip else (0.0, 1.0)
    return DecisionTree(np.array([feature, LEAF, LEAF]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
                        np.array([2, -1, -1]), np.array([0.0, lo, hi]), 1, n_features)


def blobs(seed, n=120):
    rng = np.random.default_rng(seed)
    y = np.where(rng.random(n) < 0.3, 1, -1)
    X = rng.normal(size=(n, 4))
    X[:, 0] = np.where(y > 0, 1.0, -1.0) + 0.05 * rng.normal(size=n)
    return X, y


def _pool(trees, X):
    from amlgraph.qboost import learner_votes
    return WeakLearnerPool(trees, np.stack([learner_votes(t, X) for t in trees], axis=1))


def test_fit_with_perfect_learner():
    X, y = blobs(0)
    Xv, yv = blobs(1)
    trees = [stump(0, 0.0, 4)] + [stump(f, float(t), 4, flip=bool(k % 2)) for k, (f, t) in
                                  enumerate(zip([1, 2, 3, 1, 2], [0.0, 0.5, -0.5, 1.0, -1.0]))]
    pool = _pool(trees, X)
    model = fit(X, y, Xv, yv, lambda_grid=(0.0,), pool=pool)
    singles = [best_f_beta((1 + pool.votes(Xv)[:, i]) / 2.0, yv) for i in range(pool.size)]
    assert model.val_f2 >= max(singles) - 1e-12
    assert model.n_selected >= 1


def test_fit_huge_lambda_errors():
    X, y = blobs(0)
    with pytest.raises(FitError):
        fit(X, y, X, y, lambda_grid=(1e9,), n=5)


def test_fit_sweep_records_every_lambda():
    X, y = blobs(2)
    model = fit(X, y, *blobs(3), lambda_grid=(0.0, 0.1, 1e9), n=8, seed=4)
    assert [e["lambda"] for e in model.sweep][:2] == [0.0, 0.1 * 120 / 64]
    assert model.sweep[-1]["n_selected"] == 0 and model.sweep[-1]["val_f2"] is None


def test_build_pool():
    X, y = blobs(4)
    p1 = build_pool(X, y, n=1, seed=0)
    assert p1.H.shape == (120, 1) and set(np.unique(p1.H)) <= {-1, 1}
    a, b = build_pool(X, y, n=6, seed=9), build_pool(X, y, n=6, seed=9)
    assert np.array_equal(a.H, b.H)
    assert max(np.mean(a.H[:, i] == y) for i in range(6)) > 0.5
    with pytest.raises(ValueError):
        build_pool(X, np.zeros(120), n=2)


def test_predict_scores_cases():
    X = np.array([[2.0, 0.0], [-2.0, 0.0], [2.0, -5.0]])
    trees = [stump(0, 0.0, 2), stump(0, 0.0, 2, flip=True), stump(1, -1.0, 2)]
    pool = _pool(trees, X)
    all_pos = QBoostModel(pool, np.array([True, False, False]), 0.0)
    assert predict_scores(all_pos, X[:1])[0] == 1.0
    split = QBoostModel(pool, np.array([True, True, False]), 0.0)
    assert np.all(predict_scores(split, X) == 0.5)
    single = QBoostModel(pool, np.array([False, False, True]), 0.0)
    assert predict_scores(single, X).tolist() == [1.0, 1.0, 0.0]
    # reordering selected learners leaves scores unchanged
    rev = QBoostModel(_pool(trees[::-1], X), np.array([True, True, True]), 0.0)
    full = QBoostModel(pool, np.array([True, True, True]), 0.0)
    assert np.array_equal(predict_scores(rev, X), predict_scores(full, X))
    assert np.all((predict_scores(full, X) >= 0) & (predict_scores(full, X) <= 1))
