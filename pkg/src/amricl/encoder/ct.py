"""Contrastive Tension training of the node encoder.

Positive pairs are a graph with itself, negatives pair it with other graphs
from the corpus. The per-pair loss is

    positive:  -log sigmoid(h . h+)
    negative:  -log sigmoid(1 - h . h-)

with the textbook ``-log(1 - sigmoid(h . h-))`` negative available through
``canonical_negative``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..graph import LinearizedGraph, truncate
from .model import EncoderParams, backward, dropout_mask, forward, init_params, pooling_weights
from .vocab import Vocabulary, build_vocab

log = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step = step
        super().__init__(f"non-finite loss {loss} at step {step}")


@dataclass(frozen=True, eq=False)
class GraphEmbedding:
    vector: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def _log_sigmoid(x: float) -> float:
    # stable log(sigmoid(x))
    return -float(np.logaddexp(0.0, -x))


def _sigmoid(x: float) -> float:
    return float(0.5 * (1.0 + np.tanh(0.5 * x)))


def pair_loss(score: float, label: str, canonical_negative: bool = False) -> float:
    if label == POSITIVE:
        return -_log_sigmoid(score)
    if label == NEGATIVE:
        return -_log_sigmoid(-score) if canonical_negative else -_log_sigmoid(1.0 - score)
    raise ValueError(f"label must be {POSITIVE!r} or {NEGATIVE!r}")


def pair_loss_grad(score: float, label: str, canonical_negative: bool = False) -> float:
    """d(pair_loss)/d(score)."""
    if label == POSITIVE:
        return _sigmoid(score) - 1.0
    if canonical_negative:
        return _sigmoid(score)
    return 1.0 - _sigmoid(1.0 - score)


def ct_loss(h_anchor, h_partner, label: str, canonical_negative: bool = False) -> float:
    a = np.asarray(getattr(h_anchor, "vector", h_anchor), dtype=float)
    b = np.asarray(getattr(h_partner, "vector", h_partner), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return pair_loss(float(a @ b), label, canonical_negative)


@dataclass(frozen=True)
class CtBatch:
    anchors: tuple[LinearizedGraph, ...]
    partners: tuple[LinearizedGraph, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if not len(self.anchors) == len(self.partners) == len(self.labels):
            raise ValueError("anchors, partners and labels must have equal length")
        for a, p, lab in zip(self.anchors, self.partners, self.labels):
            if lab == POSITIVE and a is not p:
                raise ValueError("positive pair must pair a graph with itself")
            if lab not in (POSITIVE, NEGATIVE):
                raise ValueError(f"bad label {lab!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_positive(self) -> int:
        return sum(1 for lab in self.labels if lab == POSITIVE)


def _negatives_per_anchor(batch_size: int, positive_count: int) -> list[int]:
    q, r = divmod(batch_size - positive_count, positive_count)
    return [q + (1 if i < r else 0) for i in range(positive_count)]


def sample_ct_batch(corpus: Sequence[LinearizedGraph], batch_size: int = 16, positive_count: int = 4,
                    rng_seed: Union[int, Sequence[int]] = 0,
                    anchors: Optional[Sequence[int]] = None) -> CtBatch:
    """One CT batch: each anchor contributes (G, G) plus negatives (G, G') with G' != G.

    With the defaults there are 4 anchors, each with one positive and three
    negatives. ``anchors`` fixes the anchor indices (used to sweep an epoch).
    """
    if positive_count < 1 or positive_count > batch_size:
        raise ValueError("need 1 <= positive_count <= batch_size")
    if len(corpus) <= batch_size:
        raise ValueError(f"corpus of {len(corpus)} graphs is too small for batch size {batch_size}")
    rng = np.random.default_rng(rng_seed)
    if anchors is None:
        anchors = rng.choice(len(corpus), size=positive_count, replace=False)
    n_neg = _negatives_per_anchor(batch_size, positive_count)
    a, p, lab = [], [], []
    for slot, ai in enumerate(anchors):
        ai = int(ai)
        a.append(corpus[ai])
        p.append(corpus[ai])
        lab.append(POSITIVE)
        others = rng.choice(len(corpus) - 1, size=n_neg[slot % positive_count], replace=False)
        for o in others:
            o = int(o) + (1 if o >= ai else 0)
            a.append(corpus[ai])
            p.append(corpus[o])
            lab.append(NEGATIVE)
    return CtBatch(tuple(a), tuple(p), tuple(lab))


def ct_batch_loss_and_grad(params: EncoderParams, vocab: Vocabulary, batch: CtBatch,
                           pooling: str = "sap_mean", *, partner_params: Optional[EncoderParams] = None,
                           canonical_negative: bool = False, train_mode: bool = False, step: int = 0):
    """Mean CT loss over the batch and its exact gradient.

    Returns ``(loss, grads)``; when ``partner_params`` is given (twin
    encoders) partners are encoded with them and the result is
    ``(loss, (grads, partner_grads))``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    twin = partner_params is not None
    p2 = partner_params if twin else params
    g1 = params.zeros_like()
    g2 = p2.zeros_like() if twin else g1
    n = len(batch)
    total = 0.0
    for i, (ga, gp, label) in enumerate(zip(batch.anchors, batch.partners, batch.labels)):
        sides = []
        for side, (lin, prm) in enumerate(((ga, params), (gp, p2))):
            mask = None
            if train_mode and prm.dropout_rate > 0:
                mask = dropout_mask(prm.seed, (step, i, side), (len(lin), prm.d), prm.dropout_rate)
            h_nodes, tr = forward(prm, lin, vocab, mask)
            w = pooling_weights(lin, pooling)
            sides.append((w @ h_nodes, w, tr, prm))
        (ha, wa, tra, pa), (hp, wp, trp, pp) = sides
        score = float(ha @ hp)
        total += pair_loss(score, label, canonical_negative)
        ds = pair_loss_grad(score, label, canonical_negative) / n
        backward(pa, tra, np.outer(wa, ds * hp), g1)
        backward(pp, trp, np.outer(wp, ds * ha), g2)
    loss = total / n
    return (loss, (g1, g2)) if twin else (loss, g1)


@dataclass
class CtConfig:
    epochs: int = 1
    lr: float = 1e-5
    dropout: float = 0.1
    d: int = 128
    n_layers: int = 2
    seed: int = 0
    pooling: str = "sap_mean"
    batch_size: int = 16
    positive_count: int = 4
    twin: bool = False
    canonical_negative: bool = False
    max_tokens: Optional[int] = 256
    min_count: int = 1


@dataclass
class CtResult:
    params: EncoderParams
    vocab: Vocabulary
    losses: list[float] = field(default_factory=list)
    partner_params: Optional[EncoderParams] = None


def train_ct(corpus: Sequence[LinearizedGraph], config: CtConfig = CtConfig(),
             vocab: Optional[Vocabulary] = None, params: Optional[EncoderParams] = None) -> CtResult:
    """Plain SGD over CT batches, each corpus graph serving as an anchor once per epoch."""
    if not corpus:
        raise ValueError("empty corpus")
    if config.max_tokens:
        corpus = [truncate(lin, config.max_tokens) for lin in corpus]
    vocab = vocab or build_vocab(corpus, config.min_count)
    if params is None:
        params = init_params(len(vocab), config.d, config.n_layers, config.seed, config.dropout)
    partner = params.copy() if config.twin else None
    losses: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        first = len(losses)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(corpus))
        for start in range(0, len(order), config.positive_count):
            chunk = order[start:start + config.positive_count]
            batch = sample_ct_batch(corpus, config.batch_size, config.positive_count,
                                    rng_seed=[config.seed, epoch, step], anchors=chunk)
            loss, grads = ct_batch_loss_and_grad(params, vocab, batch, config.pooling,
                                                 partner_params=partner,
                                                 canonical_negative=config.canonical_negative,
                                                 train_mode=True, step=step)
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            losses.append(loss)
            if partner is not None:
                params = params.axpy(-config.lr, grads[0])
                partner = partner.axpy(-config.lr, grads[1])
            else:
                params = params.axpy(-config.lr, grads)
            step += 1
        log.info("epoch %d: mean batch loss %.6f", epoch, float(np.mean(losses[first:])))
    return CtResult(params, vocab, losses, partner)


def mean_ct_loss(params: EncoderParams, vocab: Vocabulary, corpus: Sequence[LinearizedGraph],
                 pooling: str = "sap_mean", n_batches: int = 20, seed: int = 0,
                 batch_size: int = 16, positive_count: int = 4) -> float:
    """Mean evaluation-mode loss over a fixed, seeded set of batches."""
    total = 0.0
    for b in range(n_batches):
        batch = sample_ct_batch(corpus, batch_size, positive_count, rng_seed=[seed, b])
        loss, _ = ct_batch_loss_and_grad(params, vocab, batch, pooling)
        total += loss
    return total / n_batches
