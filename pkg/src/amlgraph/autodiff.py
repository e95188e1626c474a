"""Dense float64 kernels with a tape for reverse-mode gradients, a parameter store and Adam.

Values are plain ``numpy`` arrays wrapped in :class:`Var`. Every tape-recorded op
appends one backward closure; :meth:`Tape.backward` replays them in exact reverse
order. Parameters pulled from a :class:`ParameterStore` share their gradient buffer
with the store, so running several forward/backward passes before one
:func:`adam_step` accumulates gradients, which is the same as summing the losses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ParseError, ShapeError

DTYPE = np.float64
LOG_FLOOR = 1e-12

CHECKPOINT_MAGIC = "amlgraph-checkpoint v1"


class Var:
    __slots__ = ("value", "_grad", "requires_grad")

    def __init__(self, value, grad: np.ndarray | None = None, requires_grad: bool = True):
        self.value = np.asarray(value, dtype=DTYPE)
        self._grad = grad
        self.requires_grad = requires_grad

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self._grad is None:
            # first contribution: take a private copy instead of zero-filling then adding
            self._grad = np.array(np.broadcast_to(g, self.value.shape), dtype=DTYPE)
        else:
            self._grad += g

    def __repr__(self) -> str:
        return f"Var(shape={self.shape})"


def const(value) -> Var:
    return Var(value, requires_grad=False)


class Tape:
    """Ordered record of primitive ops. Not thread-safe; one tape per forward pass."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, backward: Callable[[], None]) -> None:
        self._ops.append(backward)

    def backward(self, loss: Var, seed: float = 1.0) -> None:
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad[...] += seed
        for op in reversed(self._ops):
            op()
        self._ops.clear()


# ---------------------------------------------------------------- primitives


def matmul(tape: Tape, a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    out = Var(a.value @ b.value)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ b.value.T)
        if b.requires_grad:
            b.accumulate(a.value.T @ g)

    tape.record(backward)
    return out


def propagate(tape: Tape, adj, h: Var) -> Var:
    """``adj @ h`` for a constant (dense or sparse) square matrix ``adj``."""
    if adj.shape[1] != h.shape[0]:
        raise ShapeError(f"adjacency {adj.shape} does not conform with {h.shape}")
    out = Var(np.asarray(adj @ h.value))

    def backward():
        h.accumulate(np.asarray(adj.T @ out.grad))

    tape.record(backward)
    return out


def add(tape: Tape, a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes {a.shape} and {b.shape} differ")
    out = Var(a.value + b.value)

    def backward():
        a.accumulate(out.grad)
        b.accumulate(out.grad)

    tape.record(backward)
    return out


def add_bias(tape: Tape, x: Var, b: Var) -> Var:
    """Add a length-``cols`` bias to every row."""
    if b.value.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"bias {b.shape} does not match {x.shape}")
    out = Var(x.value + b.value)

    def backward():
        x.accumulate(out.grad)
        b.accumulate(out.grad.sum(axis=0))

    tape.record(backward)
    return out


def mul(tape: Tape, a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes {a.shape} and {b.shape} differ")
    out = Var(a.value * b.value)

    def backward():
        a.accumulate(out.grad * b.value)
        b.accumulate(out.grad * a.value)

    tape.record(backward)
    return out


def relu(tape: Tape, x: Var) -> Var:
    mask = x.value > 0
    out = Var(np.maximum(x.value, 0.0))

    def backward():
        x.accumulate(out.grad * mask)

    tape.record(backward)
    return out


def softplus(tape: Tape, x: Var) -> Var:
    out = Var(np.logaddexp(0.0, x.value))

    def backward():
        # d/dx log(1+e^x) = sigmoid(x)
        x.accumulate(out.grad * _sigmoid(x.value))

    tape.record(backward)
    return out


def log(tape: Tape, x: Var) -> Var:
    out = Var(np.log(x.value))

    def backward():
        x.accumulate(out.grad / x.value)

    tape.record(backward)
    return out


def exp(tape: Tape, x: Var) -> Var:
    out = Var(np.exp(x.value))

    def backward():
        x.accumulate(out.grad * out.value)

    tape.record(backward)
    return out


def clamp(tape: Tape, x: Var, lo: float, hi: float) -> Var:
    inside = (x.value >= lo) & (x.value <= hi)
    out = Var(np.clip(x.value, lo, hi))

    def backward():
        x.accumulate(out.grad * inside)

    tape.record(backward)
    return out


def concat_cols(tape: Tape, parts: list[Var]) -> Var:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat row counts differ: {[p.shape for p in parts]}")
    out = Var(np.concatenate([p.value for p in parts], axis=1))
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward():
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            p.accumulate(out.grad[:, lo:hi])

    tape.record(backward)
    return out


def row_softmax(tape: Tape, x: Var) -> Var:
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = Var(e / e.sum(axis=1, keepdims=True))

    def backward():
        s = out.value
        g = out.grad
        x.accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

    tape.record(backward)
    return out


def sum_all(tape: Tape, x: Var) -> Var:
    out = Var(np.array(x.value.sum()))

    def backward():
        x.accumulate(np.broadcast_to(out.grad, x.shape))

    tape.record(backward)
    return out


def add_scalars(tape: Tape, terms: list[Var]) -> Var:
    out = Var(np.array(sum(float(t.value) for t in terms)))

    def backward():
        for t in terms:
            t.accumulate(out.grad)

    tape.record(backward)
    return out


def neighbor_product(tape: Tape, adj, z: Var) -> Var:
    """``out[v, r] = prod_{u : adj[v, u] != 0} z[u, r]``.

    Exact multilinear pooling; intended for small graphs (gradient uses an explicit
    leave-one-out product per edge so zeros in ``z`` are handled).
    """
    a = sp.csr_matrix(adj)
    n = a.shape[0]
    if a.shape[1] != z.shape[0]:
        raise ShapeError(f"adjacency {a.shape} does not conform with {z.shape}")
    neigh = [a.indices[a.indptr[v]:a.indptr[v + 1]][a.data[a.indptr[v]:a.indptr[v + 1]] != 0] for v in range(n)]
    out = Var(np.stack([z.value[nb].prod(axis=0) for nb in neigh]) if n else np.zeros((0, z.shape[1])))

    def backward():
        g = np.zeros_like(z.value)
        for v, nb in enumerate(neigh):
            block = z.value[nb]
            for i, u in enumerate(nb):
                others = np.delete(block, i, axis=0).prod(axis=0)
                g[u] += out.grad[v] * others
        z.accumulate(g)

    tape.record(backward)
    return out


def weighted_cross_entropy(tape: Tape, probs: Var, labels: np.ndarray, class_weights=(0.7, 0.3)) -> Var:
    """Mean class-weighted negative log-likelihood over labeled rows.

    ``labels`` holds +1 (illicit, column 1), -1 (licit, column 0) or 0 (unlabeled).
    Rows with label 0 contribute nothing. With no labeled rows the loss is 0 and a
    ``RuntimeWarning`` is emitted.
    """
    labels = np.asarray(labels)
    if probs.value.ndim != 2 or probs.shape[1] != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} do not conform")
    rows = np.flatnonzero(labels != 0)
    if rows.size == 0:
        warnings.warn("weighted_cross_entropy: no labeled rows, loss defined as 0", RuntimeWarning, stacklevel=2)
        out = Var(np.array(0.0))
        tape.record(lambda: None)
        return out
    cols = (labels[rows] > 0).astype(int)
    w = np.where(cols == 1, class_weights[0], class_weights[1])
    p = probs.value[rows, cols]
    clipped = np.maximum(p, LOG_FLOOR)
    out = Var(np.array(-(w * np.log(clipped)).sum() / rows.size))

    def backward():
        g = np.zeros_like(probs.value)
        g[rows, cols] = -float(out.grad) * w / clipped * (p >= LOG_FLOOR) / rows.size
        probs.accumulate(g)

    tape.record(backward)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------- parameters + Adam


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)


class ParameterStore:
    """Named trainable arrays. Insertion order is the serialization order."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self.step = 0

    def add(self, name: str, value) -> Param:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Param(value)
        self._params[name] = p
        return p

    def add_glorot(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> Param:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def add_zeros(self, name: str, *shape: int) -> Param:
        return self.add(name, np.zeros(shape))

    def var(self, name: str) -> Var:
        p = self._params[name]
        return Var(p.value, grad=p.grad)

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def items(self):
        return self._params.items()

    def size(self) -> int:
        return int(sum(p.value.size for p in self._params.values()))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            p = self._params[k]
            if p.value.shape != np.shape(v):
                raise ShapeError(f"{k}: stored shape {p.value.shape}, loaded {np.shape(v)}")
            p.value[...] = v

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for k, p in self._params.items():
            q = other.add(k, p.value)
            q.adam_m[...] = p.adam_m
            q.adam_v[...] = p.adam_v
        other.step = self.step
        return other


def adam_step(store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0, t: int | None = None) -> ParameterStore:
    """One Adam update with L2 weight decay folded into the gradient; zeroes gradients."""
    if t is None:
        store.step += 1
        t = store.step
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in store._params.values():
        g = p.grad + weight_decay * p.value
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        p.value -= lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + eps)
        p.grad[...] = 0.0
    return store


# ------------------------------------------------------------ gradient check


def finite_difference_check(f: Callable[[Tape, ParameterStore], Var], store: ParameterStore,
                            epsilon: float = 1e-6) -> float:
    """Max relative error between taped gradients and central differences.

    ``f(tape, store)`` must build a scalar loss on ``tape`` from ``store.var(...)``.
    The relative error of a pair ``(a, b)`` is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    store.zero_grad()
    tape = Tape()
    loss = f(tape, store)
    if not np.isfinite(loss.value).all():
        raise NumericError(f"loss is not finite: {loss.value}")
    tape.backward(loss)
    analytic = {k: p.grad.copy() for k, p in store.items()}
    store.zero_grad()

    def value() -> float:
        v = float(f(Tape(), store).value)
        if not np.isfinite(v):
            raise NumericError(f"loss is not finite under perturbation: {v}")
        return v

    worst = 0.0
    for name, p in store.items():
        flat = p.value.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = value()
            flat[i] = orig - epsilon
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2 * epsilon)
            err = abs(ga[i] - numeric) / max(abs(ga[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(store: ParameterStore, path, meta: dict | None = None) -> None:
    """Write a text checkpoint.

    Layout::

        # amlgraph-checkpoint v1
        # key=value            (zero or more metadata lines)
        param <name> <ndim> <dim0> [<dim1> ...]
        <row-major values, space separated, %.17g>
    """
    lines = [f"# {CHECKPOINT_MAGIC}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    for name, p in store.items():
        dims = " ".join(str(d) for d in p.value.shape)
        lines.append(f"param {name} {p.value.ndim} {dims}")
        lines.append(" ".join(f"{x:.17g}" for x in p.value.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != f"# {CHECKPOINT_MAGIC}":
        raise ParseError(path, 1, "missing checkpoint header")
    meta: dict[str, str] = {}
    values: dict[str, np.ndarray] = {}
    i = 1
    while i < len(text):
        line = text[i]
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
            i += 1
            continue
        parts = line.split()
        if len(parts) < 3 or parts[0] != "param":
            raise ParseError(path, i + 1, f"expected 'param' record, got {line[:40]!r}")
        ndim = int(parts[2])
        shape = tuple(int(d) for d in parts[3:3 + ndim])
        raw = text[i + 1].split() if i + 1 < len(text) else []
        if len(raw) != int(np.prod(shape, dtype=int)):
            raise ParseError(path, i + 2, f"{parts[1]}: expected {int(np.prod(shape))} values, got {len(raw)}")
        values[parts[1]] = np.array([float(x) for x in raw], dtype=DTYPE).reshape(shape)
        i += 2
    return values, meta
