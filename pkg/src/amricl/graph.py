"""AMR graph data model and the structural algorithms built on it.

Graphs are immutable. Edges are kept in the order their roles appeared in
the source text, which makes every traversal below deterministic.

    >>> from amricl.penman import parse_penman
    >>> g = parse_penman("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))")
    >>> shortest_amr_path(g, "j", "e").node_vars
    ('j', 's', 'e')
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

MULTI_ROOT_VAR = "_multi"
MULTI_ROOT_CONCEPT = "multi-sentence"
RENAME_SUFFIX = "~2"

# roles that end in "-of" but are not inversions
_NON_INVERSE_OF = frozenset({":consist-of", ":prep-out-of", ":prep-on-behalf-of"})


class GraphError(ValueError):
    """Structural problem with a graph or an operation's arguments."""


class NoPathError(GraphError):
    """The two entity nodes lie in different components."""


class UnalignableEntity(GraphError):
    """No graph node could be matched to an entity mention."""


def is_inverse_role(role: str) -> bool:
    return role.endswith("-of") and role not in _NON_INVERSE_OF


@dataclass(frozen=True)
class AmrNode:
    var: str
    concept: str
    is_constant: bool = False


@dataclass(frozen=True)
class AmrEdge:
    source: str
    role: str
    target: str
    inverse: bool = False


@dataclass(frozen=True)
class AmrGraph:
    nodes: tuple[AmrNode, ...]
    edges: tuple[AmrEdge, ...]
    root: str

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        seen = set()
        for n in self.nodes:
            if not n.var:
                raise GraphError("node with empty variable")
            if not n.concept:
                raise GraphError(f"node {n.var!r} has an empty concept")
            if n.var in seen:
                raise GraphError(f"duplicate variable {n.var!r}")
            seen.add(n.var)
        if self.root not in seen:
            raise GraphError(f"root {self.root!r} is not a node")
        for e in self.edges:
            if not e.role.startswith(":"):
                raise GraphError(f"role {e.role!r} must begin with ':'")
            if e.source not in seen or e.target not in seen:
                raise GraphError(f"edge {e.source} {e.role} {e.target} has a missing endpoint")

    @cached_property
    def node_map(self) -> dict[str, AmrNode]:
        return {n.var: n for n in self.nodes}

    @property
    def role_types(self) -> frozenset[str]:
        return frozenset(e.role for e in self.edges)

    @cached_property
    def incident(self) -> dict[str, tuple[tuple[int, str], ...]]:
        """var -> ((edge index, other endpoint), ...) in stored edge order."""
        inc: dict[str, list[tuple[int, str]]] = {n.var: [] for n in self.nodes}
        for i, e in enumerate(self.edges):
            inc[e.source].append((i, e.target))
            if e.target != e.source:
                inc[e.target].append((i, e.source))
        return {k: tuple(v) for k, v in inc.items()}

    @cached_property
    def outgoing(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, list[int]] = {n.var: [] for n in self.nodes}
        for i, e in enumerate(self.edges):
            out[e.source].append(i)
        return {k: tuple(v) for k, v in out.items()}

    def concept(self, var: str) -> str:
        return self.node_map[var].concept

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class SapPath:
    """Shortest AMR path, ordered from the object entity to the subject entity."""

    node_vars: tuple[str, ...]
    edge_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.node_vars:
            raise GraphError("empty path")
        if len(self.edge_indices) != len(self.node_vars) - 1:
            raise GraphError("path needs exactly one edge per hop")
        if len(set(self.node_vars)) != len(self.node_vars):
            raise GraphError("path repeats a node")

    @property
    def obj(self) -> str:
        return self.node_vars[0]

    @property
    def sub(self) -> str:
        return self.node_vars[-1]

    @property
    def intermediates(self) -> tuple[str, ...]:
        return self.node_vars[1:-1]

    def __len__(self) -> int:
        return len(self.edge_indices)


@dataclass(frozen=True, eq=False)
class LinearizedGraph:
    """Depth-first token sequence of a graph plus its token adjacency matrix.

    ``token_origin`` holds the node variable for node tokens and the edge
    index for role tokens. ``edge_links`` lists ``(role_token, source_token,
    target_token)`` with source/target following the edge's direction.
    ``path_vars`` optionally marks the variables a SAP-pooled readout should
    average over.
    """

    tokens: tuple[str, ...]
    token_kind: tuple[str, ...]
    token_origin: tuple
    adjacency: np.ndarray
    edge_links: tuple[tuple[int, int, int], ...] = ()
    path_vars: Optional[tuple[str, ...]] = None

    def __len__(self) -> int:
        return len(self.tokens)

    def node_rows(self, var: str) -> list[int]:
        return [i for i, (k, o) in enumerate(zip(self.token_kind, self.token_origin))
                if k == "node" and o == var]

    @property
    def node_vars(self) -> tuple[str, ...]:
        """Distinct node variables in first-visit order."""
        seen: dict[str, None] = {}
        for k, o in zip(self.token_kind, self.token_origin):
            if k == "node":
                seen.setdefault(o, None)
        return tuple(seen)

    def with_path_vars(self, path_vars: Iterable[str]) -> "LinearizedGraph":
        return LinearizedGraph(self.tokens, self.token_kind, self.token_origin,
                               self.adjacency, self.edge_links, tuple(path_vars))


def rename_vars(g: AmrGraph, mapping: dict[str, str]) -> AmrGraph:
    def r(v):
        return mapping.get(v, v)

    return AmrGraph(
        nodes=tuple(AmrNode(r(n.var), n.concept, n.is_constant) for n in g.nodes),
        edges=tuple(AmrEdge(r(e.source), e.role, r(e.target), e.inverse) for e in g.edges),
        root=r(g.root),
    )


def merge_pair(g1: AmrGraph, g2: AmrGraph) -> AmrGraph:
    """Join two sentence graphs under a shared ``multi-sentence`` root.

    Variables of ``g2`` that collide with ``g1`` get the ``~2`` suffix.
    """
    if not g1.nodes or not g2.nodes:
        raise GraphError("cannot merge an empty graph")
    taken = set(g1.node_map)
    clash = {v for v in g2.node_map if v in taken}
    if clash:
        g2 = rename_vars(g2, {v: v + RENAME_SUFFIX for v in clash})
    all_vars = taken | set(g2.node_map)
    if len(all_vars) != len(g1.nodes) + len(g2.nodes) or MULTI_ROOT_VAR in all_vars:
        raise GraphError("variable collision after renaming")
    root = AmrNode(MULTI_ROOT_VAR, MULTI_ROOT_CONCEPT)
    return AmrGraph(
        nodes=(root,) + g1.nodes + g2.nodes,
        edges=(AmrEdge(MULTI_ROOT_VAR, ":snt1", g1.root), AmrEdge(MULTI_ROOT_VAR, ":snt2", g2.root))
        + g1.edges + g2.edges,
        root=MULTI_ROOT_VAR,
    )


def _bfs(g: AmrGraph, start: str) -> tuple[dict[str, int], dict[str, tuple[str, int]]]:
    dist = {start: 0}
    parent: dict[str, tuple[str, int]] = {}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for ei, v in g.incident[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                parent[v] = (u, ei)
                queue.append(v)
    return dist, parent


def shortest_amr_path(g: AmrGraph, obj_var: str, sub_var: str) -> SapPath:
    """Minimum-hop path from ``obj_var`` to ``sub_var`` ignoring edge direction.

    BFS expands neighbours in stored edge order, so the first shortest path
    found under that order is returned.
    """
    for v in (obj_var, sub_var):
        if v not in g.node_map:
            raise GraphError(f"entity variable {v!r} not in graph")
    _, parent = _bfs(g, obj_var)
    if sub_var != obj_var and sub_var not in parent:
        raise NoPathError(f"no path between {obj_var!r} and {sub_var!r}")
    nodes = [sub_var]
    edges = []
    while nodes[-1] != obj_var:
        u, ei = parent[nodes[-1]]
        nodes.append(u)
        edges.append(ei)
    return SapPath(tuple(reversed(nodes)), tuple(reversed(edges)))


def _check_path(g: AmrGraph, path: SapPath) -> None:
    for v in path.node_vars:
        if v not in g.node_map:
            raise GraphError(f"path variable {v!r} not in graph")
    for (a, b), ei in zip(zip(path.node_vars, path.node_vars[1:]), path.edge_indices):
        if not 0 <= ei < len(g.edges):
            raise GraphError(f"edge index {ei} out of range")
        e = g.edges[ei]
        if {e.source, e.target} != {a, b}:
            raise GraphError(f"edge {ei} does not join {a!r} and {b!r}")


def extract_subgraph(g: AmrGraph, path: SapPath) -> AmrGraph:
    """Isolate the path: its nodes and edges only, roles and directions kept."""
    _check_path(g, path)
    keep = set(path.node_vars)
    dist, _ = _bfs(g, g.root)
    root = min(path.node_vars, key=lambda v: (dist.get(v, len(g.nodes) + 1), path.node_vars.index(v)))
    return AmrGraph(
        nodes=tuple(n for n in g.nodes if n.var in keep),
        edges=tuple(g.edges[i] for i in sorted(path.edge_indices)),
        root=root,
    )


def linearize(g: AmrGraph) -> LinearizedGraph:
    """Depth-first token sequence ``[u1, r1, v1, ...]`` with adjacency.

    Outgoing edges are followed from the root in stored order. A target that
    was already visited is emitted again as a token but not descended into.
    Edges unreachable along their direction (possible in extracted subgraphs)
    are picked up afterwards, starting from a fresh token of an
    already-visited endpoint.
    """
    tokens: list[str] = []
    kinds: list[str] = []
    origin: list = []
    links: list[tuple[int, int, int]] = []
    emitted = [False] * len(g.edges)
    visited = {g.root}

    def emit(tok, kind, org) -> int:
        tokens.append(tok)
        kinds.append(kind)
        origin.append(org)
        return len(tokens) - 1

    def walk(u: str, ut: int, first_edges) -> None:
        stack = [(u, ut, iter(first_edges))]
        while stack:
            u, ut, it = stack[-1]
            for ei in it:
                if emitted[ei]:
                    continue
                emitted[ei] = True
                e = g.edges[ei]
                forward = e.source == u
                v = e.target if forward else e.source
                rt = emit(e.role, "role", ei)
                vt = emit(g.concept(v), "node", v)
                links.append((rt, ut, vt) if forward else (rt, vt, ut))
                if v not in visited:
                    visited.add(v)
                    stack.append((v, vt, iter(g.outgoing[v])))
                    break
            else:
                stack.pop()

    walk(g.root, emit(g.concept(g.root), "node", g.root), g.outgoing[g.root])
    while not all(emitted):
        ei = next((i for i, e in enumerate(g.edges)
                   if not emitted[i] and (e.source in visited or e.target in visited)), None)
        if ei is None:
            break
        e = g.edges[ei]
        anchor = e.source if e.source in visited else e.target
        walk(anchor, emit(g.concept(anchor), "node", anchor), [ei])
    if len(visited) != len(g.nodes) or not all(emitted):
        raise GraphError("graph is disconnected")
    n = len(tokens)
    adj = np.zeros((n, n), dtype=bool)
    for rt, st, tt in links:
        adj[rt, st] = adj[st, rt] = True
        adj[rt, tt] = adj[tt, rt] = True
    return LinearizedGraph(tuple(tokens), tuple(kinds), tuple(origin), adj, tuple(links))


def truncate(lin: LinearizedGraph, max_tokens: int) -> LinearizedGraph:
    """Drop trailing (role, node) pairs until at most ``max_tokens`` remain."""
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    if len(lin) <= max_tokens:
        return lin
    keep = max_tokens if max_tokens % 2 == 1 else max_tokens - 1
    idx = np.arange(keep)
    links = tuple(l for l in lin.edge_links if max(l) < keep)
    return LinearizedGraph(lin.tokens[:keep], lin.token_kind[:keep], lin.token_origin[:keep],
                           lin.adjacency[np.ix_(idx, idx)].copy(), links, lin.path_vars)


_SENSE = re.compile(r"-\d+$")


def _bare_concept(concept: str) -> str:
    return _SENSE.sub("", concept.strip('"')).lower()


def find_entity_node(g: AmrGraph, mention: str, var: Optional[str] = None) -> str:
    """Resolve an entity to a node: explicit variable first, then concept match.

    The fallback compares the lowercased mention (and its last word) against
    each concept with any sense suffix removed.
    """
    if var:
        if var in g.node_map:
            return var
        if var + RENAME_SUFFIX in g.node_map:
            return var + RENAME_SUFFIX
    words = mention.lower().split()
    candidates = [mention.lower().strip()] + ([words[-1]] if words else [])
    for cand in candidates:
        for n in g.nodes:
            if n.concept.strip('"').lower() == cand or _bare_concept(n.concept) == cand:
                return n.var
    raise UnalignableEntity(f"cannot align mention {mention!r}" + (f" (var {var!r})" if var else ""))


__all__: Sequence[str] = [
    "AmrNode", "AmrEdge", "AmrGraph", "SapPath", "LinearizedGraph", "GraphError", "NoPathError",
    "UnalignableEntity", "merge_pair", "rename_vars", "shortest_amr_path", "extract_subgraph",
    "linearize", "truncate", "find_entity_node", "is_inverse_role", "MULTI_ROOT_CONCEPT",
]
