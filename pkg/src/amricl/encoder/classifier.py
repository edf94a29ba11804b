"""Feed-forward relation classifier over relation representations.

The head is ``softmax(W2 tanh(W1 x + b1) + b2)`` where ``x`` concatenates
the pooled graph part (from the node encoder) and an optional sentence
vector. Cross-entropy gradients flow back into the encoder unless it is
frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..graph import LinearizedGraph
from .model import EncoderParams, backward, forward
from .vocab import Vocabulary


@dataclass(frozen=True, eq=False)
class RelationInput:
    """One training example: graph readout spec, optional sentence vector, label.

    ``pool`` is a (blocks, tokens) matrix; the graph part of ``x`` is
    ``(pool @ H).ravel()``.
    """

    lin: LinearizedGraph
    pool: np.ndarray
    label: str
    sentence: Optional[np.ndarray] = None


@dataclass
class ClassifierHead:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    labels: tuple[str, ...]
    loss_trace: list[float] = field(default_factory=list)

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.w2 @ np.tanh(self.w1 @ x + self.b1) + self.b2

    def predict(self, x: np.ndarray) -> str:
        return self.labels[int(np.argmax(self.logits(x)))]


@dataclass
class ClassifierConfig:
    freeze_encoder: bool = False
    epochs: int = 200
    lr: float = 0.1
    hidden: int = 32
    seed: int = 0


def init_head(in_dim: int, hidden: int, labels: Sequence[str], seed: int = 0) -> ClassifierHead:
    rng = np.random.default_rng(seed)
    return ClassifierHead(
        w1=rng.normal(0, 1 / np.sqrt(in_dim), size=(hidden, in_dim)),
        b1=np.zeros(hidden),
        w2=rng.normal(0, 1 / np.sqrt(hidden), size=(len(labels), hidden)),
        b2=np.zeros(len(labels)),
        labels=tuple(labels),
    )


def relation_features(params: EncoderParams, vocab: Vocabulary, inp: RelationInput):
    h, tr = forward(params, inp.lin, vocab)
    graph_part = (inp.pool @ h).ravel()
    x = graph_part if inp.sentence is None else np.concatenate([graph_part, inp.sentence])
    return x, h, tr


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def classifier_loss_and_grad(head: ClassifierHead, params: EncoderParams, vocab: Vocabulary,
                             inputs: Sequence[RelationInput], freeze_encoder: bool = False):
    """Mean cross-entropy plus gradients for the head and (unless frozen) the encoder."""
    index = {lab: i for i, lab in enumerate(head.labels)}
    gh = ClassifierHead(*(np.zeros_like(a) for a in head.arrays()), labels=head.labels)
    ge = None if freeze_encoder else params.zeros_like()
    n = len(inputs)
    total = 0.0
    for inp in inputs:
        x, h, tr = relation_features(params, vocab, inp)
        a = np.tanh(head.w1 @ x + head.b1)
        p = _softmax(head.w2 @ a + head.b2)
        y = index[inp.label]
        total -= np.log(max(p[y], 1e-300))
        dz2 = p.copy()
        dz2[y] -= 1.0
        dz2 /= n
        gh.w2 += np.outer(dz2, a)
        gh.b2 += dz2
        dz1 = (head.w2.T @ dz2) * (1.0 - a ** 2)
        gh.w1 += np.outer(dz1, x)
        gh.b1 += dz1
        if ge is not None:
            dx = head.w1.T @ dz1
            d_graph = dx[: inp.pool.shape[0] * h.shape[1]].reshape(inp.pool.shape[0], h.shape[1])
            backward(params, tr, inp.pool.T @ d_graph, ge)
    return total / n, gh, ge


def train_relation_classifier(inputs: Sequence[RelationInput], labels: Sequence[str],
                              params: EncoderParams, vocab: Vocabulary,
                              config: ClassifierConfig = ClassifierConfig()):
    """Full-batch gradient descent on cross-entropy. Returns ``(head, params)``."""
    if not inputs:
        raise ValueError("no trainable examples")
    labels = tuple(labels)
    for inp in inputs:
        if inp.label not in labels:
            raise ValueError(f"label {inp.label!r} is not in the label set")
    x0, _, _ = relation_features(params, vocab, inputs[0])
    head = init_head(len(x0), config.hidden, labels, config.seed)
    params = params.copy()
    for _ in range(config.epochs):
        loss, gh, ge = classifier_loss_and_grad(head, params, vocab, inputs, config.freeze_encoder)
        head.loss_trace.append(float(loss))
        head.w1 -= config.lr * gh.w1
        head.b1 -= config.lr * gh.b1
        head.w2 -= config.lr * gh.w2
        head.b2 -= config.lr * gh.b2
        if ge is not None:
            params = params.axpy(-config.lr, ge)
    return head, params


def accuracy(head: ClassifierHead, params: EncoderParams, vocab: Vocabulary,
             inputs: Sequence[RelationInput]) -> float:
    hits = sum(head.predict(relation_features(params, vocab, inp)[0]) == inp.label for inp in inputs)
    return hits / len(inputs)
