"""Graph, sentence and relation representations for retrieval.

Four graph configurations are supported, crossing two path modes with two
pooling modes:

* ``path_only``: encode only the isolated shortest-path subgraph.
* ``graph_enhanced``: encode the whole graph, then read out path nodes.
* ``mean``: average of the path nodes (dimension ``d``).
* ``concatenation``: object node, subject node, mean of intermediates (``3d``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .encoder.model import NodeEmbeddings, var_mean_weights
from .graph import AmrGraph, LinearizedGraph, SapPath, extract_subgraph, linearize, shortest_amr_path

PATH_MODES = ("path_only", "graph_enhanced")
POOLINGS = ("mean", "concatenation")


class NodeEncoder(Protocol):
    name: str
    dim: int

    def encode_nodes(self, lin: LinearizedGraph) -> NodeEmbeddings: ...


@dataclass(frozen=True)
class RepresentationConfig:
    path_mode: str = "path_only"
    pooling: str = "mean"

    def __post_init__(self):
        if self.path_mode not in PATH_MODES:
            raise ValueError(f"path_mode must be one of {PATH_MODES}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")

    @property
    def blocks(self) -> int:
        return 1 if self.pooling == "mean" else 3


ALL_CONFIGS = tuple(RepresentationConfig(p, q) for p in PATH_MODES for q in POOLINGS)


@dataclass(frozen=True, eq=False)
class GraphReRepresentation:
    vector: np.ndarray
    config: RepresentationConfig


@dataclass(frozen=True, eq=False)
class SentenceReRepresentation:
    vector: np.ndarray
    source_id: str = ""


@dataclass(frozen=True, eq=False)
class RelationRepresentation:
    vector: np.ndarray
    parts: tuple[str, ...]
    part_dims: tuple[int, ...]


def mean_pool_matrix(emb_kind: Sequence[str], emb_origin: Sequence, path: SapPath) -> np.ndarray:
    return var_mean_weights(emb_kind, emb_origin, path.node_vars)[None, :]


def concat_pool_matrix(emb_kind: Sequence[str], emb_origin: Sequence, path: SapPath) -> np.ndarray:
    n = len(emb_kind)
    rows = [var_mean_weights(emb_kind, emb_origin, [path.obj]),
            var_mean_weights(emb_kind, emb_origin, [path.sub]),
            var_mean_weights(emb_kind, emb_origin, path.intermediates) if path.intermediates else np.zeros(n)]
    return np.stack(rows)


def pool_mean(h: NodeEmbeddings, path: SapPath) -> np.ndarray:
    """Average over path nodes; a re-entrant node first averages its own rows."""
    return (mean_pool_matrix(h.token_kind, h.token_origin, path) @ h.vectors).ravel()


def pool_concat(h: NodeEmbeddings, path: SapPath) -> np.ndarray:
    """``h_obj ++ h_sub ++ mean(intermediates)``; the last block is zero for adjacent entities."""
    return (concat_pool_matrix(h.token_kind, h.token_origin, path) @ h.vectors).ravel()


@dataclass(frozen=True, eq=False)
class GraphInput:
    """What an encoder sees for one entity pair, plus the readout matrix."""

    lin: LinearizedGraph
    pool: np.ndarray
    path: SapPath


def prepare_graph_input(g: AmrGraph, obj_var: str, sub_var: str, cfg: RepresentationConfig) -> GraphInput:
    path = shortest_amr_path(g, obj_var, sub_var)
    if cfg.path_mode == "path_only":
        lin = linearize(extract_subgraph(g, path))
    else:
        lin = linearize(g)
    lin = lin.with_path_vars(path.node_vars)
    build = mean_pool_matrix if cfg.pooling == "mean" else concat_pool_matrix
    return GraphInput(lin, build(lin.token_kind, lin.token_origin, path), path)


def graph_representation(g: AmrGraph, obj_var: str, sub_var: str, cfg: RepresentationConfig,
                         encoder: NodeEncoder) -> GraphReRepresentation:
    gi = prepare_graph_input(g, obj_var, sub_var, cfg)
    h = encoder.encode_nodes(gi.lin)
    return GraphReRepresentation((gi.pool @ h.vectors).ravel(), cfg)


def relation_representation(graph_part: Optional[GraphReRepresentation] = None,
                            sent_part: Optional[SentenceReRepresentation] = None) -> RelationRepresentation:
    """Concatenate graph then sentence parts; either may be absent, not both."""
    vecs, names = [], []
    if graph_part is not None:
        vecs.append(np.asarray(graph_part.vector, dtype=float))
        names.append("graph")
    if sent_part is not None:
        vecs.append(np.asarray(sent_part.vector, dtype=float))
        names.append("sentence")
    if not vecs:
        raise ValueError("relation representation needs a graph or a sentence part")
    return RelationRepresentation(np.concatenate(vecs), tuple(names), tuple(len(v) for v in vecs))


def _marker_spans(text: str, span, name: str):
    start, end = span
    if not (0 <= start < end <= len(text)):
        raise ValueError(f"{name} span {span} out of bounds")
    return start, end


def insert_entity_markers(text: str, subj_span, subj_type: str, obj_span, obj_type: str) -> str:
    """Wrap the subject in ``[SUB_T] .. [/SUB_T]`` and the object in ``[OBJ_T] .. [/OBJ_T]``."""
    s0, s1 = _marker_spans(text, subj_span, "subject")
    o0, o1 = _marker_spans(text, obj_span, "object")
    if s0 < o1 and o0 < s1:
        raise ValueError("subject and object spans overlap")
    st, ot = subj_type.upper(), obj_type.upper()
    inserts = [(s0, f"[SUB_{st}] "), (s1, f" [/SUB_{st}]"), (o0, f"[OBJ_{ot}] "), (o1, f" [/OBJ_{ot}]")]
    # right to left keeps earlier offsets valid; at a shared offset the closer must end up first
    out = text
    for pos, marker in sorted(inserts, key=lambda x: (x[0], not x[1].startswith(" ")), reverse=True):
        out = out[:pos] + marker + out[pos:]
    return out


def strip_entity_markers(marked: str, subj_type: str, obj_type: str) -> str:
    st, ot = subj_type.upper(), obj_type.upper()
    for m in (f"[SUB_{st}] ", f" [/SUB_{st}]", f"[OBJ_{ot}] ", f" [/OBJ_{ot}]"):
        marked = marked.replace(m, "", 1)
    return marked
