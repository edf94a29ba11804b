"""Training-free structural encoder based on signed feature hashing."""

from __future__ import annotations

import hashlib
from collections import Counter
from functools import lru_cache

import numpy as np

from ..graph import LinearizedGraph
from .ct import GraphEmbedding
from .model import NodeEmbeddings

MIN_DIM = 16
MAX_LEN_BUCKET = 6


@lru_cache(maxsize=65536)
def _slot(feature: str, seed: int, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(f"{seed}\x1f{feature}".encode(), digest_size=8).digest(), "little")
    return h % dim, (1.0 if (h >> 63) & 1 else -1.0)


def _triple(lin: LinearizedGraph, link: tuple[int, int, int]) -> str:
    rt, st, tt = link
    return f"t:{lin.tokens[st]}|{lin.tokens[rt]}|{lin.tokens[tt]}"


def graph_features(lin: LinearizedGraph) -> Counter:
    feats: Counter = Counter()
    for tok, kind in zip(lin.tokens, lin.token_kind):
        feats[("c:" if kind == "node" else "r:") + tok] += 1
    for link in lin.edge_links:
        feats[_triple(lin, link)] += 1
    n_edges = sum(1 for k in lin.token_kind if k == "role")
    feats[f"len:{min(n_edges, MAX_LEN_BUCKET)}"] += 1
    return feats


def _hash_vector(feats: Counter, dim: int, seed: int) -> np.ndarray:
    v = np.zeros(dim)
    for f in sorted(feats):
        i, sign = _slot(f, seed, dim)
        v[i] += sign * feats[f]
    return v


def structural_encode(lin: LinearizedGraph, dim: int = 256, seed: int = 0) -> GraphEmbedding:
    """L2-normalised hashed bag of concepts, roles, edge triples and a length bucket.

    The features are a multiset, so edge order does not affect the result.
    """
    if dim < MIN_DIM:
        raise ValueError(f"dim must be >= {MIN_DIM}")
    v = _hash_vector(graph_features(lin), dim, seed)
    norm = np.linalg.norm(v)
    return GraphEmbedding(v / norm if norm > 0 else v)


class StructuralEncoder:
    """Per-token hashed features.

    Each token carries its own label, its incident edge triples, and
    half-lexical role contexts (role and direction, with and without the
    neighbour's label) so nodes in the same structural position overlap even
    when their concepts differ.
    """

    name = "structural"

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < MIN_DIM:
            raise ValueError(f"dim must be >= {MIN_DIM}")
        self.dim = dim
        self.seed = seed

    def encode_nodes(self, lin: LinearizedGraph) -> NodeEmbeddings:
        per_token = [Counter({("c:" if k == "node" else "r:") + t: 1})
                     for t, k in zip(lin.tokens, lin.token_kind)]
        for link in lin.edge_links:
            rt, st, tt = link
            role, src, tgt = lin.tokens[rt], lin.tokens[st], lin.tokens[tt]
            trip = _triple(lin, link)
            for ti in link:
                per_token[ti][trip] += 1
            # delexicalised position: which role attaches here, from which side, to what
            per_token[st].update((f"out:{role}", f"out:{role}|{tgt}"))
            per_token[tt].update((f"in:{role}", f"in:{role}|{src}"))
            per_token[rt].update((f"e:{role}|{src}|*", f"e:{role}|*|{tgt}"))
        h = np.stack([_hash_vector(c, self.dim, self.seed) for c in per_token]) if per_token \
            else np.zeros((0, self.dim))
        return NodeEmbeddings(h, lin.token_origin, lin.token_kind)
