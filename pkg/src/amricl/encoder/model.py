"""Residual message-passing node encoder with hand-written backprop.

Each token starts from its embedding row and is refined for ``L`` rounds::

    h_i <- h_i + tanh(W_t @ mean_{j ~ i} h_j + b_t)

where ``j ~ i`` runs over the token adjacency of the linearized graph and an
empty neighbourhood contributes the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from ..graph import LinearizedGraph
from .vocab import Vocabulary


@dataclass
class EncoderParams:
    embedding: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.weights = list(self.weights)
        self.biases = list(self.biases)
        if self.embedding.ndim != 2 or self.embedding.shape[1] < 1:
            raise ValueError("embedding must be a (vocab, d) matrix with d > 0")
        if len(self.weights) != len(self.biases):
            raise ValueError("need one bias per adapter layer")
        d = self.d
        for w, b in zip(self.weights, self.biases):
            if w.shape != (d, d) or b.shape != (d,):
                raise ValueError(f"adapter layer shapes must be ({d},{d}) and ({d},)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def d(self) -> int:
        return self.embedding.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        return [self.embedding, *self.weights, *self.biases]

    def zeros_like(self) -> "EncoderParams":
        return replace(self, embedding=np.zeros_like(self.embedding),
                       weights=[np.zeros_like(w) for w in self.weights],
                       biases=[np.zeros_like(b) for b in self.biases])

    def copy(self) -> "EncoderParams":
        return replace(self, embedding=self.embedding.copy(),
                       weights=[w.copy() for w in self.weights],
                       biases=[b.copy() for b in self.biases])

    def axpy(self, alpha: float, other: "EncoderParams") -> "EncoderParams":
        """Return ``self + alpha * other``."""
        if alpha == 0:
            return self.copy()
        return replace(self, embedding=self.embedding + alpha * other.embedding,
                       weights=[w + alpha * g for w, g in zip(self.weights, other.weights)],
                       biases=[b + alpha * g for b, g in zip(self.biases, other.biases)])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def init_params(vocab_size: int, d: int, n_layers: int, seed: int = 0,
                dropout_rate: float = 0.1) -> EncoderParams:
    if d <= 0 or n_layers < 0:
        raise ValueError("need d > 0 and n_layers >= 0")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d)
    return EncoderParams(
        embedding=rng.normal(0.0, scale, size=(vocab_size, d)),
        weights=[rng.normal(0.0, scale, size=(d, d)) for _ in range(n_layers)],
        biases=[np.zeros(d) for _ in range(n_layers)],
        dropout_rate=dropout_rate,
        seed=seed,
    )


@dataclass(frozen=True, eq=False)
class NodeEmbeddings:
    vectors: np.ndarray
    token_origin: tuple
    token_kind: tuple

    def rows_for(self, var: str) -> list[int]:
        return [i for i, (k, o) in enumerate(zip(self.token_kind, self.token_origin))
                if k == "node" and o == var]


def dropout_mask(seed: int, key: Sequence[int], shape: tuple[int, ...], rate: float) -> np.ndarray:
    """Inverted-dropout mask drawn from a counter-keyed stream."""
    if rate <= 0:
        return np.ones(shape)
    rng = np.random.default_rng([seed, *[int(k) for k in key]])
    return (rng.random(shape) >= rate) / (1.0 - rate)


def mean_operator(adjacency: np.ndarray) -> np.ndarray:
    a = adjacency.astype(float)
    deg = a.sum(axis=1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


@dataclass
class _Trace:
    ids: np.ndarray
    mask: Optional[np.ndarray]
    op: np.ndarray
    hs: list[np.ndarray] = field(default_factory=list)
    aggs: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)


def _check(params: EncoderParams, vocab: Vocabulary) -> None:
    if params.embedding.shape[0] != len(vocab):
        raise ValueError(f"embedding has {params.embedding.shape[0]} rows but vocabulary has {len(vocab)}")
    if not params.is_finite():
        raise ValueError("non-finite encoder parameter")


def forward(params: EncoderParams, lin: LinearizedGraph, vocab: Vocabulary,
            mask: Optional[np.ndarray] = None) -> tuple[np.ndarray, _Trace]:
    ids = np.asarray(vocab.lookup(lin.tokens), dtype=np.int64)
    h = params.embedding[ids]
    if mask is not None:
        h = h * mask
    tr = _Trace(ids, mask, mean_operator(lin.adjacency), [h])
    for w, b in zip(params.weights, params.biases):
        agg = tr.op @ h
        act = np.tanh(agg @ w.T + b)
        h = h + act
        tr.aggs.append(agg)
        tr.acts.append(act)
        tr.hs.append(h)
    return h, tr


def backward(params: EncoderParams, tr: _Trace, d_out: np.ndarray, grads: EncoderParams) -> None:
    """Accumulate d(loss)/d(params) into ``grads`` given d(loss)/d(H^L)."""
    dh = d_out
    for t in range(params.n_layers - 1, -1, -1):
        dz = dh * (1.0 - tr.acts[t] ** 2)
        grads.weights[t] += dz.T @ tr.aggs[t]
        grads.biases[t] += dz.sum(axis=0)
        dh = dh + tr.op.T @ (dz @ params.weights[t])
    if tr.mask is not None:
        dh = dh * tr.mask
    np.add.at(grads.embedding, tr.ids, dh)


def encode_nodes(params: EncoderParams, lin: LinearizedGraph, vocab: Vocabulary,
                 train_mode: bool = False, dropout_key: Sequence[int] = (0,)) -> NodeEmbeddings:
    """Node representations for every token of ``lin`` (one row per token)."""
    _check(params, vocab)
    mask = None
    if train_mode and params.dropout_rate > 0:
        mask = dropout_mask(params.seed, dropout_key, (len(lin), params.d), params.dropout_rate)
    h, _ = forward(params, lin, vocab, mask)
    return NodeEmbeddings(h, lin.token_origin, lin.token_kind)


def var_mean_weights(token_kind: Sequence[str], token_origin: Sequence, variables: Iterable[str]) -> np.ndarray:
    """Row weights averaging per-variable means (re-entrant visits count once)."""
    variables = list(variables)
    w = np.zeros(len(token_kind))
    if not variables:
        return w
    for var in variables:
        rows = [i for i, (k, o) in enumerate(zip(token_kind, token_origin)) if k == "node" and o == var]
        if not rows:
            raise ValueError(f"variable {var!r} has no token row")
        w[rows] += 1.0 / (len(rows) * len(variables))
    return w


def pooling_weights(lin: LinearizedGraph, pooling: str) -> np.ndarray:
    """Readout weights for ``h_graph``: ``all_nodes_mean`` or ``sap_mean``."""
    if pooling == "all_nodes_mean":
        return np.full(len(lin), 1.0 / len(lin))
    if pooling == "sap_mean":
        present = lin.node_vars
        focus = present if lin.path_vars is None else [v for v in lin.path_vars if v in present]
        return var_mean_weights(lin.token_kind, lin.token_origin, focus)
    raise ValueError(f"unknown pooling {pooling!r}")


class TrainedEncoder:
    """Node encoder backed by (possibly CT-trained) parameters."""

    name = "ct"

    def __init__(self, params: EncoderParams, vocab: Vocabulary):
        _check(params, vocab)
        self.params = params
        self.vocab = vocab

    @property
    def dim(self) -> int:
        return self.params.d

    def encode_nodes(self, lin: LinearizedGraph) -> NodeEmbeddings:
        return encode_nodes(self.params, lin, self.vocab)
