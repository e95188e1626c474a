"""GCN layers and the two-branch (linear + graph-convolution) node classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, Var
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class GcnConfig:
    in_dim: int = 93
    linear_sizes: tuple[int, ...] = (50, 30)
    conv_sizes: tuple[int, ...] = (50, 10)
    out_dim: int = 2
    skip_connection: bool = False

    def __post_init__(self):
        object.__setattr__(self, "linear_sizes", tuple(self.linear_sizes))
        object.__setattr__(self, "conv_sizes", tuple(self.conv_sizes))
        if self.out_dim != 2:
            raise ConfigError("out_dim must be 2 (licit, illicit)")
        if self.in_dim < 1 or any(s < 1 for s in self.linear_sizes + self.conv_sizes):
            raise ConfigError(f"layer sizes must be >= 1: {self}")

    @property
    def embedding_width(self) -> int:
        return (self.linear_sizes[-1] if self.linear_sizes else 0) + (self.conv_sizes[-1] if self.conv_sizes else 0)

    def to_dict(self) -> dict:
        return asdict(self)


def dense_layer(tape: Tape, h: Var, w: Var, b: Var) -> Var:
    return ad.add_bias(tape, ad.matmul(tape, h, w), b)


def gcn_layer(tape: Tape, adjacency_norm, h: Var, w: Var, b: Var) -> Var:
    """``ReLU(A_norm @ H @ W + b)``."""
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"H {h.shape} and W {w.shape} do not conform")
    return ad.relu(tape, ad.add_bias(tape, ad.propagate(tape, adjacency_norm, ad.matmul(tape, h, w)), b))


class NodeClassifier:
    """Shared plumbing: linear branch, output head, and the forward contract.

    Subclasses fill ``params`` and implement :meth:`graph_branch`.
    """

    config = None

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.params = ParameterStore()

    def _init_linear_branch(self, rng, in_dim, sizes):
        prev = in_dim
        for i, size in enumerate(sizes):
            self.params.add_glorot(f"lin{i}.W", prev, size, rng)
            self.params.add_zeros(f"lin{i}.b", size)
            prev = size

    def _init_head(self, rng, width, out_dim):
        if width:
            self.params.add_glorot("out.W", width, out_dim, rng)
        else:
            self.params.add_zeros("out.W", 0, out_dim)
        self.params.add_zeros("out.b", out_dim)

    def linear_branch(self, tape: Tape, x: Var) -> Var | None:
        h = x
        i = 0
        while f"lin{i}.W" in self.params:
            h = ad.relu(tape, dense_layer(tape, h, self.params.var(f"lin{i}.W"), self.params.var(f"lin{i}.b")))
            i += 1
        return h if i else None

    def graph_branch(self, tape: Tape, adjacency_norm, x: Var) -> Var | None:
        raise NotImplementedError

    def extra_logits(self, tape: Tape, x: Var) -> Var | None:
        return None

    def forward(self, tape: Tape, graph) -> tuple[Var, Var, Var]:
        """Return ``(logits, probs, embedding)``; probability column 1 is illicit."""
        if graph.features.shape[1] != self.config.in_dim:
            raise ShapeError(f"graph features have width {graph.features.shape[1]}, model expects {self.config.in_dim}")
        x = ad.const(graph.features)
        parts = [p for p in (self.linear_branch(tape, x), self.graph_branch(tape, graph.adjacency_norm, x)) if p is not None]
        if parts:
            emb = ad.concat_cols(tape, parts)
        else:
            emb = ad.const(np.zeros((graph.n_nodes, 0)))
        logits = dense_layer(tape, emb, self.params.var("out.W"), self.params.var("out.b"))
        extra = self.extra_logits(tape, x)
        if extra is not None:
            logits = ad.add(tape, logits, extra)
        return logits, ad.row_softmax(tape, logits), emb

    def predict_proba(self, graph) -> np.ndarray:
        _, probs, _ = self.forward(Tape(), graph)
        return probs.value[:, 1].copy()

    def embed(self, graph) -> np.ndarray:
        _, _, emb = self.forward(Tape(), graph)
        return emb.value.copy()


class GcnModel(NodeClassifier):
    def __init__(self, config: GcnConfig | None = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or GcnConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        self._init_linear_branch(rng, c.in_dim, c.linear_sizes)
        prev = c.in_dim
        for i, size in enumerate(c.conv_sizes):
            self.params.add_glorot(f"conv{i}.W", prev, size, rng)
            self.params.add_zeros(f"conv{i}.b", size)
            prev = size
        self._init_head(rng, c.embedding_width, c.out_dim)
        if c.skip_connection:
            self.params.add_glorot("skip.W", c.in_dim, c.out_dim, rng)

    def graph_branch(self, tape, adjacency_norm, x):
        if not self.config.conv_sizes:
            return None
        h = x
        for i in range(len(self.config.conv_sizes)):
            h = gcn_layer(tape, adjacency_norm, h, self.params.var(f"conv{i}.W"), self.params.var(f"conv{i}.b"))
        return h

    def extra_logits(self, tape, x):
        if not self.config.skip_connection:
            return None
        return ad.matmul(tape, x, self.params.var("skip.W"))


def parameter_count(model: NodeClassifier) -> int:
    return model.params.size()
