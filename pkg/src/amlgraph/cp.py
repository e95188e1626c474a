"""CP-decomposed product pooling and the tensorized two-branch classifier.

A rank-R layer stores a shared input factor ``W`` (d_in x R), its bias ``b_w``, an
output factor ``M`` (R x d_out) and bias ``b_m``. For a node ``v`` with neighbor set
``N(v)`` (self included through the diagonal of the normalized adjacency)::

    z_u      = sigma(h_u W + b_w)
    pooled_v = prod_{u in N(v)} z_u             (oracle mode, sigma = identity)
    pooled_v = exp(sum_u A[v, u] log z_u)       (weighted mode, sigma = softplus)
    out_v    = pooled_v M + b_m

Oracle mode is exactly the contraction of the symmetric tensor
``T = sum_r w_r (x) ... (x) w_r (x) m_r`` with the neighbor features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import reduce

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ConfigError, NumericError, ShapeError
from .gcn import NodeClassifier

Z_MIN, Z_MAX = 1e-8, 1e8
CP_MODES = ("oracle", "weighted")


@dataclass
class CpLayerParams:
    W: np.ndarray
    b_w: np.ndarray
    M: np.ndarray
    b_m: np.ndarray

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.b_w = np.asarray(self.b_w, dtype=float).reshape(-1)
        self.b_m = np.asarray(self.b_m, dtype=float).reshape(-1)
        if self.W.shape[1] != self.M.shape[0] or self.b_w.size != self.rank or self.b_m.size != self.M.shape[1]:
            raise ShapeError(f"inconsistent CP factors W{self.W.shape} b_w{self.b_w.shape} "
                             f"M{self.M.shape} b_m{self.b_m.shape}")

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.M.shape[1]

    @property
    def n_params(self) -> int:
        return self.W.size + self.b_w.size + self.M.size + self.b_m.size

    @classmethod
    def random(cls, d_in: int, d_out: int, rank: int, rng: np.random.Generator) -> "CpLayerParams":
        bw = np.sqrt(6.0 / (d_in + rank))
        bm = np.sqrt(6.0 / (rank + d_out))
        return cls(rng.uniform(-bw, bw, (d_in, rank)), np.zeros(rank),
                   rng.uniform(-bm, bm, (rank, d_out)), np.zeros(d_out))


def cp_param_count(d_in: int, d_out: int, rank: int) -> int:
    return rank * (d_in + d_out) + rank + d_out


def cp_pool(tape: Tape, adjacency_norm, h: Var, w: Var, b_w: Var, m: Var, b_m: Var, mode: str = "weighted") -> Var:
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"H {h.shape} and W {w.shape} do not conform")
    pre = ad.add_bias(tape, ad.matmul(tape, h, w), b_w)
    if mode == "oracle":
        pooled = ad.neighbor_product(tape, adjacency_norm, pre)
    elif mode == "weighted":
        z = ad.clamp(tape, ad.softplus(tape, pre), Z_MIN, Z_MAX)
        pooled = ad.exp(tape, ad.propagate(tape, adjacency_norm, ad.log(tape, z)))
    else:
        raise ConfigError(f"unknown CP mode {mode!r}; expected one of {CP_MODES}")
    out = ad.add_bias(tape, ad.matmul(tape, pooled, m), b_m)
    bad = ~np.isfinite(out.value).all(axis=1)
    if bad.any():
        raise NumericError(f"non-finite CP pooling output at node {int(np.flatnonzero(bad)[0])}")
    return out


def cp_pool_forward(params: CpLayerParams, adjacency_norm, H, mode: str = "weighted") -> np.ndarray:
    """Untaped convenience wrapper around :func:`cp_pool`."""
    c = ad.const
    out = cp_pool(Tape(), adjacency_norm, c(H), c(params.W), c(params.b_w), c(params.M), c(params.b_m), mode)
    return out.value


def materialize_cp_tensor(params: CpLayerParams, k: int, with_bias: bool = True) -> np.ndarray:
    """Explicit (k+1)-mode tensor ``sum_r w_r^{(x)k} (x) m_r``.

    With ``with_bias`` the input modes act on features augmented by a trailing 1, so
    the bias ``b_w`` is folded in as an extra row of ``W``. The output bias ``b_m`` is
    not part of the tensor.
    """
    W = np.vstack([params.W, params.b_w[None, :]]) if with_bias else params.W
    d = W.shape[0]
    T = np.zeros((d,) * k + (params.d_out,))
    for r in range(params.rank):
        T += reduce(np.multiply.outer, [W[:, r]] * k + [params.M[r]])
    return T


def cp_contract_reference(T_full: np.ndarray, xs) -> np.ndarray:
    """Contract the first ``len(xs)`` modes of ``T_full`` with the vectors ``xs``."""
    xs = [np.asarray(x, dtype=float) for x in xs]
    if T_full.ndim != len(xs) + 1:
        raise ShapeError(f"tensor has {T_full.ndim} modes, need {len(xs) + 1} for {len(xs)} inputs")
    out = T_full
    for i, x in enumerate(xs):
        if out.shape[0] != x.shape[0]:
            raise ShapeError(f"mode {i + 1} has size {out.shape[0]}, input has {x.shape[0]}")
        out = np.tensordot(x, out, axes=(0, 0))
    return out


@dataclass(frozen=True)
class CpGcnConfig:
    in_dim: int = 93
    linear_sizes: tuple[int, ...] = (25, 15)
    conv_sizes: tuple[int, ...] = (12, 5)
    ranks: tuple[int, ...] = (10, 4)
    out_dim: int = 2
    mode: str = "weighted"

    def __post_init__(self):
        for name in ("linear_sizes", "conv_sizes", "ranks"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.ranks) != len(self.conv_sizes):
            raise ConfigError("need exactly one rank per CP layer")
        if any(r < 1 for r in self.ranks):
            raise ConfigError("CP ranks must be >= 1")
        if self.out_dim != 2:
            raise ConfigError("out_dim must be 2 (licit, illicit)")
        if self.mode not in CP_MODES:
            raise ConfigError(f"unknown CP mode {self.mode!r}")

    @property
    def embedding_width(self) -> int:
        return (self.linear_sizes[-1] if self.linear_sizes else 0) + (self.conv_sizes[-1] if self.conv_sizes else 0)

    def to_dict(self) -> dict:
        return asdict(self)


class CpGcnModel(NodeClassifier):
    """Two-branch classifier whose graph branch stacks CP pooling layers (each followed by ReLU)."""

    def __init__(self, config: CpGcnConfig | None = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or CpGcnConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        self._init_linear_branch(rng, c.in_dim, c.linear_sizes)
        prev = c.in_dim
        for i, (size, rank) in enumerate(zip(c.conv_sizes, c.ranks)):
            layer = CpLayerParams.random(prev, size, rank, rng)
            self.params.add(f"cp{i}.W", layer.W)
            self.params.add(f"cp{i}.b_w", layer.b_w)
            self.params.add(f"cp{i}.M", layer.M)
            self.params.add(f"cp{i}.b_m", layer.b_m)
            prev = size
        self._init_head(rng, c.embedding_width, c.out_dim)

    def layer_params(self, i: int) -> CpLayerParams:
        p = self.params
        return CpLayerParams(p[f"cp{i}.W"].value, p[f"cp{i}.b_w"].value, p[f"cp{i}.M"].value, p[f"cp{i}.b_m"].value)

    def graph_branch(self, tape, adjacency_norm, x):
        if not self.config.conv_sizes:
            return None
        h = x
        v = self.params.var
        for i in range(len(self.config.conv_sizes)):
            h = ad.relu(tape, cp_pool(tape, adjacency_norm, h, v(f"cp{i}.W"), v(f"cp{i}.b_w"),
                                      v(f"cp{i}.M"), v(f"cp{i}.b_m"), self.config.mode))
        return h
