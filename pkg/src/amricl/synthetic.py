"""Seeded generators for random AMR graphs and small relation datasets.

Used by the test-suite and by ``amricl``'s toy data; nothing here is needed
to run the pipeline on real corpora.
"""

from __future__ import annotations

import numpy as np

from .graph import AmrEdge, AmrGraph, AmrNode, is_inverse_role
from .penman import serialize_penman

CONCEPTS = [
    "boy", "girl", "dog", "city", "book", "eat-01", "go-02", "want-01", "see-01", "say-01",
    "house", "car", "person", "company", "tree", "run-01", "give-01", "know-01", "think-01",
    "big", "small", "red", "water", "food", "teacher", "school", "river", "night", "music",
]
ROLES = [":ARG0", ":ARG1", ":ARG2", ":mod", ":location", ":time", ":manner", ":ARG0-of", ":ARG1-of", ":poss"]
CONST_ROLES = [(":polarity", "-"), (":quant", "5"), (":quant", "12"), (":name", '"Paris"'),
               (":mode", "imperative"), (":value", '"New York"')]


def random_graph(rng: np.random.Generator, max_nodes: int = 30, reentrancy: float = 0.15,
                 constants: float = 0.15) -> AmrGraph:
    """Random rooted graph, every node reachable from the root along edge direction."""
    total = int(rng.integers(1, max_nodes + 1))
    n_const = int(rng.binomial(total - 1, constants)) if total > 1 else 0
    n_var = total - n_const
    nodes = [AmrNode(f"n{i}", CONCEPTS[int(rng.integers(len(CONCEPTS)))]) for i in range(n_var)]
    edges = []
    for i in range(1, n_var):
        role = ROLES[int(rng.integers(len(ROLES)))]
        edges.append(AmrEdge(f"n{int(rng.integers(i))}", role, f"n{i}", is_inverse_role(role)))
    if n_var > 1:
        for _ in range(int(rng.binomial(n_var, reentrancy))):
            a, b = rng.choice(n_var, size=2, replace=False)
            role = ROLES[int(rng.integers(len(ROLES)))]
            edges.insert(int(rng.integers(len(edges) + 1)),
                         AmrEdge(f"n{a}", role, f"n{b}", is_inverse_role(role)))
    for k in range(n_const):
        role, lit = CONST_ROLES[int(rng.integers(len(CONST_ROLES)))]
        nodes.append(AmrNode(f"_const{k}", lit, is_constant=True))
        edges.append(AmrEdge(f"n{int(rng.integers(n_var))}", role, f"_const{k}"))
    return AmrGraph(tuple(nodes), tuple(edges), "n0")


def random_connected_graph(rng: np.random.Generator, max_nodes: int = 30) -> AmrGraph:
    """Random graph whose edges may point either way (only undirected connectivity)."""
    n = int(rng.integers(1, max_nodes + 1))
    nodes = [AmrNode(f"n{i}", CONCEPTS[int(rng.integers(len(CONCEPTS)))]) for i in range(n)]
    edges = []
    for i in range(1, n):
        j = int(rng.integers(i))
        src, dst = (j, i) if rng.random() < 0.7 else (i, j)
        edges.append(AmrEdge(f"n{src}", ROLES[int(rng.integers(len(ROLES)))], f"n{dst}"))
    for _ in range(int(rng.integers(0, n // 2 + 1))):
        a, b = rng.integers(n, size=2)
        if a != b:
            edges.insert(int(rng.integers(len(edges) + 1)),
                         AmrEdge(f"n{a}", ROLES[int(rng.integers(len(ROLES)))], f"n{b}"))
    return AmrGraph(tuple(nodes), tuple(edges), "n0")


# --- relation datasets -------------------------------------------------------

NOUNS = ["joy", "bottle", "rum", "wine", "box", "apple", "factory", "car", "engine", "team",
         "player", "choir", "singer", "fire", "smoke", "storm", "flood", "book", "author", "bakery",
         "bread", "virus", "fever", "flock", "bird", "forest", "tree", "jar", "honey", "museum",
         "painting", "crowd", "child", "farm", "milk", "cup", "tea", "army", "soldier", "noise"]
CONTEXT = ["yesterday", "city", "quick", "old", "new", "happy", "night", "market", "village", "large"]
CONTEXT_ROLES = [":time", ":location", ":mod", ":manner"]

# label -> (motif builder key, sentence template)
MOTIFS = {
    "Cause-Effect": ("cause", "The {sub} was caused by the {obj} that day."),
    "Content-Container": ("contain", "The {obj} was kept inside the {sub}."),
    "Member-Collection": ("member", "The {obj} belongs to the {sub}."),
    "Product-Producer": ("produce", "The {sub} made the {obj} last year."),
    "NULL": ("none", "The {obj} and the {sub} were both mentioned."),
}


def _motif(kind: str, rng: np.random.Generator, obj: str, sub: str):
    """Return (nodes, edges, root) with entity vars 'o' and 's'."""
    pick = lambda xs: xs[int(rng.integers(len(xs)))]  # noqa: E731
    nodes = [AmrNode("o", obj), AmrNode("s", sub)]
    if kind == "cause":
        p = pick(["cause-01", "source"])
        nodes.insert(0, AmrNode("p", p))
        edges = [AmrEdge("p", ":ARG0", "o"), AmrEdge("p", ":ARG1", "s")]
        return nodes, edges, "p"
    if kind == "contain":
        p = pick(["contain-01", "hold-01"])
        nodes.insert(0, AmrNode("p", p))
        edges = [AmrEdge("p", ":ARG0", "s"), AmrEdge("p", ":ARG1", "o")]
        return nodes, edges, "p"
    if kind == "member":
        p = pick(["include-91", "have-org-role-91"])
        nodes.insert(0, AmrNode("p", p))
        nodes.append(AmrNode("q", "member"))
        edges = [AmrEdge("p", ":ARG1", "s"), AmrEdge("p", ":ARG2", "q"), AmrEdge("q", ":poss", "o")]
        return nodes, edges, "p"
    if kind == "produce":
        p = pick(["produce-01", "make-01"])
        nodes.insert(0, AmrNode("p", p))
        edges = [AmrEdge("p", ":ARG1", "o"), AmrEdge("p", ":ARG0", "s"), AmrEdge("p", ":time", "t")]
        nodes.append(AmrNode("t", "before"))
        return nodes, edges, "p"
    nodes.insert(0, AmrNode("p", "and"))
    edges = [AmrEdge("p", ":op1", "o"), AmrEdge("p", ":op2", "s")]
    return nodes, edges, "p"


def relation_graph(label: str, rng: np.random.Generator, obj: str, sub: str, n_context: int = 3) -> AmrGraph:
    nodes, edges, root = _motif(MOTIFS[label][0], rng, obj, sub)
    targets = [n.var for n in nodes]
    for i in range(n_context):
        anchor = targets[int(rng.integers(len(targets)))]
        var = f"c{i}"
        nodes.append(AmrNode(var, CONTEXT[int(rng.integers(len(CONTEXT)))]))
        edges.append(AmrEdge(anchor, CONTEXT_ROLES[int(rng.integers(len(CONTEXT_ROLES)))], var))
    return AmrGraph(tuple(nodes), tuple(edges), root)


def relation_records(labels, per_label: int, seed: int, prefix: str = "ex", n_context: int = 3,
                     null_label: str = "NULL") -> list[dict]:
    """Dataset-JSONL records whose labels correspond to shared SAP motifs."""
    rng = np.random.default_rng(seed)
    records = []
    for label in labels:
        for _ in range(per_label):
            obj, sub = rng.choice(len(NOUNS), size=2, replace=False)
            obj, sub = NOUNS[int(obj)], NOUNS[int(sub)]
            g = relation_graph(label, rng, obj, sub, n_context=n_context)
            text = MOTIFS[label][1].format(obj=obj, sub=sub)
            o_at, s_at = text.index(obj), text.index(sub)
            records.append({
                "text": text,
                "subj": {"mention": sub, "span": [s_at, s_at + len(sub)], "type": "ENT", "amr_var": "s"},
                "obj": {"mention": obj, "span": [o_at, o_at + len(obj)], "type": "ENT", "amr_var": "o"},
                "penman": [serialize_penman(g, indent=None)],
                "label": None if label == null_label else label,
            })
    order = rng.permutation(len(records))
    out = []
    for n, i in enumerate(order):
        rec = {"id": f"{prefix}{n:04d}", **records[int(i)]}
        rec["sent_vector_ref"] = rec["id"]
        out.append(rec)
    return out


def sentence_vectors(records: list[dict], dim: int, seed: int, signal: float = 1.0) -> dict[str, np.ndarray]:
    """Noisy label-correlated stand-ins for externally computed sentence vectors."""
    rng = np.random.default_rng(seed)
    labels = sorted({str(r["label"]) for r in records})
    centers = {lab: rng.normal(size=dim) for lab in labels}
    return {r["id"]: (signal * centers[str(r["label"])] + rng.normal(size=dim)).astype(np.float32)
            for r in records}
