"""QBoost: choose a subset of weak learners by minimizing a QUBO.

For a pool of ``N`` learners with votes ``h_i(x_s) in {-1, +1}`` the objective is::

    H_Q(w) = sum_s ( (1/N) sum_i w_i h_i(x_s) - y_s )^2 + lam * |w|_0,   w in {0, 1}^N

Using ``w_i^2 = w_i`` it expands to ``w^T Q w + offset`` with::

    Q_ii = (1/N^2) sum_s h_i^2 - (2/N) sum_s h_i y_s + lam
    Q_ij = (1/N^2) sum_s h_i h_j          (i != j, stored symmetrically)
    offset = sum_s y_s^2
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import CapacityError, FitError, ParseError, ShapeError
from .trainer import best_f_beta
from .trees import DecisionTree, class_weight_vector, fit_tree, tree_seeds

BRUTE_FORCE_MAX_N = 22
DEFAULT_LAMBDA_GRID = (0.0, 0.01, 0.05, 0.1, 0.5)  # multiples of S / N^2


@dataclass
class WeakLearnerPool:
    learners: list[DecisionTree]
    H: np.ndarray  # (S, N) votes on the training rows, int8 in {-1, +1}

    @property
    def size(self) -> int:
        return len(self.learners)

    def votes(self, X) -> np.ndarray:
        return np.stack([learner_votes(t, X) for t in self.learners], axis=1)


def learner_votes(tree: DecisionTree, X) -> np.ndarray:
    return np.where(tree.predict(X) > 0.5, 1, -1).astype(np.int8)


def build_pool(X, y, n: int = 50, max_depth: int = 3, seed: int = 0, class_weights=(0.7, 0.3),
               feature_subsample="sqrt") -> WeakLearnerPool:
    """Shallow Gini trees on bootstrap resamples; ``H`` holds their votes on ``X``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if not np.isin(y, (-1, 1)).all():
        raise ValueError("y must be in {-1, +1}")
    w = class_weight_vector(y, class_weights) if class_weights else np.ones(len(y))
    learners = []
    for s in tree_seeds(seed, n):
        rng = np.random.default_rng(s)
        boot = rng.integers(0, X.shape[0], X.shape[0])
        learners.append(fit_tree(X[boot], y[boot], w[boot], max_depth, feature_subsample, seed=s))
    H = np.stack([learner_votes(t, X) for t in learners], axis=1)
    return WeakLearnerPool(learners, H)


# ------------------------------------------------------------------------ QUBO


@dataclass
class QuboProblem:
    Q: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q.ndim != 2 or self.Q.shape[0] != self.Q.shape[1]:
            raise ShapeError(f"Q must be square, got {self.Q.shape}")
        if not np.allclose(self.Q, self.Q.T, rtol=0, atol=1e-12):
            raise ValueError("Q must be symmetric")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def energy(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.Q @ w + self.offset)

    def save(self, path) -> None:
        """Plain text: a ``# offset=`` comment, ``N``, then ``i j Q_ij`` for every ``i <= j``."""
        lines = [f"# offset={float(self.offset)!r}", str(self.n)]
        iu, ju = np.triu_indices(self.n)
        lines += [f"{i} {j} {float(self.Q[i, j])!r}" for i, j in zip(iu, ju)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "QuboProblem":
        offset, n, Q = 0.0, None, None
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key == "offset":
                    offset = float(val)
                continue
            parts = line.split()
            if n is None:
                n = int(parts[0])
                Q = np.zeros((n, n))
                continue
            if len(parts) != 3:
                raise ParseError(path, lineno, "expected 'i j value'")
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            Q[i, j] = Q[j, i] = v
        if Q is None:
            raise ParseError(path, 1, "missing size line")
        return cls(Q, offset)


def qboost_objective(H, y, w, lam: float) -> float:
    """Direct evaluation of ``H_Q(w)``."""
    H = np.asarray(H, dtype=float)
    w = np.asarray(w, dtype=float)
    resid = H @ w / H.shape[1] - np.asarray(y, dtype=float)
    return float(resid @ resid + lam * np.count_nonzero(w))


def build_qubo(pool_or_H, y, lam: float) -> QuboProblem:
    H = np.asarray(pool_or_H.H if isinstance(pool_or_H, WeakLearnerPool) else pool_or_H, dtype=float)
    y = np.asarray(y, dtype=float)
    if H.shape[0] != y.shape[0]:
        raise ShapeError(f"H has {H.shape[0]} rows, y has {y.shape[0]}")
    N = H.shape[1]
    Q = H.T @ H / N ** 2
    Q[np.diag_indices(N)] += -(2.0 / N) * (H.T @ y) + lam
    Q = 0.5 * (Q + Q.T)
    return QuboProblem(Q, float(y @ y))


# --------------------------------------------------------------------- solvers


@numba.njit(cache=True)
def _brute_force(Q):
    n = Q.shape[0]
    w = np.zeros(n)
    field = np.zeros(n)  # Q @ w
    energy = 0.0
    best_e = 0.0
    best_k = 0
    tol = 1e-12 * (1.0 + np.abs(Q).sum())
    for k in range(1, 1 << n):
        # binary increment: flip trailing ones to 0, then the next bit to 1
        i = 0
        while True:
            old = w[i]
            new = 1.0 - old
            d = new - old
            energy += d * (2.0 * field[i] + d * Q[i, i])
            for j in range(n):
                field[j] += d * Q[j, i]
            w[i] = new
            if new == 1.0:
                break
            i += 1
        if energy < best_e - tol:
            best_e = energy
            best_k = k
    return best_k


def solve_brute_force(q: QuboProblem) -> tuple[np.ndarray, float]:
    """Exhaustive minimum; among ties, the assignment with the smallest ``sum_i w_i 2^i``."""
    if q.n > BRUTE_FORCE_MAX_N:
        raise CapacityError(f"brute force limited to N <= {BRUTE_FORCE_MAX_N}, got {q.n}")
    if q.n == 0:
        return np.zeros(0, dtype=np.int8), q.offset
    k = _brute_force(np.ascontiguousarray(q.Q))
    w = np.array([(k >> i) & 1 for i in range(q.n)], dtype=np.int8)
    return w, q.energy(w)


@numba.njit(cache=True)
def _anneal(Q, sweeps, restarts, t_hot, t_cold, seed):
    np.random.seed(seed)
    n = Q.shape[0]
    best_w = np.zeros(n)
    best_e = np.inf
    ratio = t_cold / t_hot
    for _ in range(restarts):
        w = np.zeros(n)
        for i in range(n):
            w[i] = 1.0 if np.random.random() < 0.5 else 0.0
        field = Q @ w
        energy = w @ field
        if energy < best_e:
            best_e = energy
            best_w[:] = w
        for s in range(sweeps):
            frac = s / (sweeps - 1) if sweeps > 1 else 1.0
            temp = t_hot * ratio ** frac
            for i in range(n):
                d = 1.0 - 2.0 * w[i]
                delta = d * (2.0 * field[i] + d * Q[i, i])
                if delta <= 0.0 or np.random.random() < np.exp(-delta / temp):
                    w[i] += d
                    for j in range(n):
                        field[j] += d * Q[j, i]
                    energy += delta
                    if energy < best_e:
                        best_e = energy
                        best_w[:] = w
    return best_w


def solve_simulated_annealing(q: QuboProblem, sweeps: int = 2000, restarts: int = 10, t_hot: float | None = None,
                              t_cold: float = 1e-3, seed: int = 0) -> tuple[np.ndarray, float]:
    """Single-flip Metropolis with a geometric ladder from ``t_hot`` to ``t_cold``.

    ``t_hot`` defaults to ``2 * max|Q_ij|``. Returns the best state seen over all restarts.
    """
    if sweeps < 1 or restarts < 1 or t_cold <= 0:
        raise ValueError("sweeps, restarts and t_cold must be positive")
    if q.n == 0:
        return np.zeros(0, dtype=np.int8), q.offset
    if t_hot is None:
        t_hot = 2.0 * float(np.abs(q.Q).max())
    if t_hot <= 0:  # zero matrix: every assignment is optimal
        return np.zeros(q.n, dtype=np.int8), q.offset
    t_hot = max(t_hot, t_cold)
    w = _anneal(np.ascontiguousarray(q.Q), int(sweeps), int(restarts), float(t_hot), float(t_cold), int(seed))
    w = w.astype(np.int8)
    return w, q.energy(w)


def solve(q: QuboProblem, seed: int = 0, **anneal_kwargs) -> tuple[np.ndarray, float]:
    if q.n <= BRUTE_FORCE_MAX_N:
        return solve_brute_force(q)
    return solve_simulated_annealing(q, seed=seed, **anneal_kwargs)


# ------------------------------------------------------------------------- fit


@dataclass
class QBoostModel:
    pool: WeakLearnerPool
    selected: np.ndarray  # bool (N,)
    lam: float
    val_f2: float = 0.0
    sweep: list[dict] = field(default_factory=list)

    @property
    def n_selected(self) -> int:
        return int(np.count_nonzero(self.selected))


def fit(X_train, y_train, X_val, y_val, lambda_grid=DEFAULT_LAMBDA_GRID, lambda_scale: float | str = "auto",
        n: int = 50, max_depth: int = 3, seed: int = 0, pool: WeakLearnerPool | None = None,
        class_weights=(0.7, 0.3), **anneal_kwargs) -> QBoostModel:
    """Grid over ``lam = g * lambda_scale`` for ``g`` in ``lambda_grid``; keep the best validation F2.

    ``lambda_scale="auto"`` means ``S / N^2``. All-zero selections are discarded.
    """
    if len(lambda_grid) == 0:
        raise ValueError("lambda_grid is empty")
    y_train = np.asarray(y_train)
    if pool is None:
        pool = build_pool(X_train, y_train, n, max_depth, seed, class_weights)
    N = pool.size
    scale = y_train.shape[0] / N ** 2 if lambda_scale == "auto" else float(lambda_scale)
    val_votes = pool.votes(X_val)
    best = None
    sweep = []
    for g in lambda_grid:
        lam = float(g) * scale
        w, energy = solve(build_qubo(pool, y_train, lam), seed=seed, **anneal_kwargs)
        sel = w.astype(bool)
        entry = {"lambda": lam, "energy": energy, "n_selected": int(sel.sum()), "val_f2": None}
        sweep.append(entry)
        if not sel.any():
            continue
        f2 = best_f_beta(_vote_scores(val_votes, sel), np.asarray(y_val))
        entry["val_f2"] = f2
        if best is None or f2 > best[0]:
            best = (f2, lam, sel)
    if best is None:
        raise FitError("every lambda in the grid selected no learners; try smaller lambda values")
    return QBoostModel(pool, best[2], best[1], best[0], sweep)


def _vote_scores(votes: np.ndarray, selected: np.ndarray) -> np.ndarray:
    return (1.0 + votes[:, selected].mean(axis=1)) / 2.0


def predict_scores(model: QBoostModel, X) -> np.ndarray:
    """``(1 + mean selected vote) / 2`` in [0, 1]."""
    sel = [t for t, s in zip(model.pool.learners, model.selected) if s]
    votes = np.stack([learner_votes(t, X) for t in sel], axis=1)
    return (1.0 + votes.mean(axis=1)) / 2.0
