import numpy as np
import pytest

from amricl.graph import (AmrEdge, AmrGraph, AmrNode, GraphError, NoPathError, SapPath, UnalignableEntity,
                          extract_subgraph, find_entity_node, linearize, merge_pair, rename_vars,
                          shortest_amr_path, truncate)
from amricl.penman import parse_penman
from amricl.synthetic import random_connected_graph, random_graph
from oracles import adjacency_pairs, nx_distance, recursive_linearize


def test_graph_validation():
    with pytest.raises(GraphError):
        AmrGraph((AmrNode("a", "x"), AmrNode("a", "y")), (), "a")
    with pytest.raises(GraphError):
        AmrGraph((AmrNode("a", "x"),), (AmrEdge("a", "ARG0", "a"),), "a")
    with pytest.raises(GraphError):
        AmrGraph((AmrNode("a", "x"),), (AmrEdge("a", ":ARG0", "b"),), "a")
    with pytest.raises(GraphError):
        AmrGraph((AmrNode("a", "x"),), (), "z")


def test_merge_two_singletons():
    m = merge_pair(parse_penman("(a / hurry-01)"), parse_penman("(b / hold-01)"))
    assert m.root == "_multi"
    assert m.concept("_multi") == "multi-sentence"
    assert len(m.nodes) == 3
    assert m.edges[:2] == (AmrEdge("_multi", ":snt1", "a"), AmrEdge("_multi", ":snt2", "b"))
    assert len(shortest_amr_path(m, "a", "b")) == 2


def test_merge_with_itself_renames():
    g = parse_penman("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))")
    m = merge_pair(g, g)
    assert len(m.nodes) == 2 * len(g.nodes) + 1
    assert {"s~2", "j~2", "e~2"} <= set(m.node_map)
    assert shortest_amr_path(m, "j", "e~2").node_vars == ("j", "s", "_multi", "s~2", "e~2")


def test_merge_rejects_empty():
    g = parse_penman("(a / b)")
    with pytest.raises(GraphError):
        merge_pair(g, _empty())


def _empty():
    # bypasses validation: a graph with no nodes cannot be constructed normally
    g = object.__new__(AmrGraph)
    object.__setattr__(g, "nodes", ())
    object.__setattr__(g, "edges", ())
    object.__setattr__(g, "root", "")
    return g


def test_sap_source_graph(source_text):
    g = parse_penman(source_text)
    p = shortest_amr_path(g, "j", "e")
    assert p.node_vars == ("j", "s", "e")
    assert len(p) == 2
    assert (p.obj, p.sub, p.intermediates) == ("j", "e", ("s",))


def test_sap_identity_and_errors(source_text):
    g = parse_penman(source_text)
    assert shortest_amr_path(g, "j", "j").node_vars == ("j",)
    with pytest.raises(GraphError):
        shortest_amr_path(g, "j", "zz")
    split = AmrGraph((AmrNode("a", "x"), AmrNode("b", "y")), (), "a")
    with pytest.raises(NoPathError):
        shortest_amr_path(split, "a", "b")


def test_sap_tie_break_uses_stored_order():
    # two equal-length routes a-b-d and a-c-d; the edge stored first wins
    g = parse_penman("(a / x :r1 (b / y :r3 (d / w)) :r2 (c / z :r4 d))")
    assert shortest_amr_path(g, "a", "d").node_vars == ("a", "b", "d")


def test_sap_matches_bfs_oracle():
    rng = np.random.default_rng(1)
    for _ in range(300):
        g = random_connected_graph(rng, 30)
        a, b = rng.choice([n.var for n in g.nodes], size=2)
        p = shortest_amr_path(g, a, b)
        assert len(p) == nx_distance(g, a, b)
        assert len(shortest_amr_path(g, b, a)) == len(p)
        for (u, v), ei in zip(zip(p.node_vars, p.node_vars[1:]), p.edge_indices):
            assert {g.edges[ei].source, g.edges[ei].target} == {u, v}


def test_merge_never_shrinks_distances():
    rng = np.random.default_rng(2)
    for _ in range(100):
        g1, g2 = random_connected_graph(rng, 12), random_connected_graph(rng, 12)
        m = merge_pair(g1, g2)
        a, b = rng.choice([n.var for n in g1.nodes], size=2)
        assert len(shortest_amr_path(m, a, b)) >= nx_distance(g1, a, b)


def test_extract_subgraph(source_text):
    g = parse_penman("(s / source :ARG0 (j / joy :mod (v / very)) :ARG1 (e / eat-01) :time (n / now))")
    p = shortest_amr_path(g, "j", "e")
    sub = extract_subgraph(g, p)
    assert [n.var for n in sub.nodes] == ["s", "j", "e"]
    assert sub.edges == (AmrEdge("s", ":ARG0", "j"), AmrEdge("s", ":ARG1", "e"))
    assert sub.root == "s"


def test_extract_subgraph_root_nearest_original_root():
    g = parse_penman("(r / root :ARG0 (a / x :ARG1 (b / y :ARG2 (c / z))))")
    sub = extract_subgraph(g, shortest_amr_path(g, "c", "a"))
    assert sub.root == "a"


def test_extract_subgraph_oracle():
    rng = np.random.default_rng(3)
    for _ in range(300):
        g = random_connected_graph(rng, 30)
        a, b = rng.choice([n.var for n in g.nodes], size=2)
        p = shortest_amr_path(g, a, b)
        sub = extract_subgraph(g, p)
        assert {n.var for n in sub.nodes} == set(p.node_vars)
        assert len(sub.edges) == len(p.node_vars) - 1
        assert list(sub.edges) == [g.edges[i] for i in sorted(p.edge_indices)]


def test_extract_subgraph_rejects_bad_path(source_text):
    g = parse_penman(source_text)
    with pytest.raises(GraphError):
        extract_subgraph(g, SapPath(("j", "e"), (0,)))


def test_linearize_single_node():
    lin = linearize(parse_penman("(j / joy)"))
    assert lin.tokens == ("joy",)
    assert lin.adjacency.shape == (1, 1) and not lin.adjacency.any()


def test_linearize_source_graph(source_text):
    lin = linearize(parse_penman(source_text))
    assert lin.tokens == ("source", ":ARG0", "joy", ":ARG1", "eat-01")
    assert lin.token_kind == ("node", "role", "node", "role", "node")
    assert adjacency_pairs(lin) == [(0, 1), (0, 3), (1, 2), (3, 4)]
    assert lin.edge_links == ((1, 0, 2), (3, 0, 4))


def test_linearize_reentrancy():
    lin = linearize(parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))"))
    assert lin.tokens.count("boy") == 2
    assert lin.node_rows("b") == [i for i, t in enumerate(lin.tokens) if t == "boy"]


def test_linearize_matches_recursive_oracle():
    rng = np.random.default_rng(4)
    for _ in range(300):
        g = random_graph(rng, 30)
        lin = linearize(g)
        tokens, pairs = recursive_linearize(g)
        assert list(lin.tokens) == tokens
        assert adjacency_pairs(lin) == pairs


def test_linearize_invariants():
    rng = np.random.default_rng(6)
    for _ in range(200):
        g = random_connected_graph(rng, 30)
        a, b = rng.choice([n.var for n in g.nodes], size=2)
        for h in (g, extract_subgraph(g, shortest_amr_path(g, a, b))):
            lin = linearize(h)
            adj = lin.adjacency
            assert (adj == adj.T).all() and not adj.diagonal().any()
            deg = adj.sum(axis=1)
            roles = [i for i, k in enumerate(lin.token_kind) if k == "role"]
            assert all(deg[i] == 2 for i in roles)
            assert len(roles) == len(h.edges)
            assert set(lin.node_vars) == {n.var for n in h.nodes}


def test_linearize_rejects_disconnected():
    with pytest.raises(GraphError):
        linearize(AmrGraph((AmrNode("a", "x"), AmrNode("b", "y")), (), "a"))


def test_truncate_drops_whole_pairs(source_text):
    lin = linearize(parse_penman(source_text))
    t = truncate(lin, 4)
    assert t.tokens == ("source", ":ARG0", "joy")
    assert t.adjacency.shape == (3, 3)
    assert truncate(lin, 10).tokens == lin.tokens


def test_find_entity_node():
    g = parse_penman("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))")
    assert find_entity_node(g, "anything", "j") == "j"
    assert find_entity_node(g, "Joy") == "j"
    assert find_entity_node(g, "eat") == "e"
    assert find_entity_node(g, "great joy") == "j"
    with pytest.raises(UnalignableEntity):
        find_entity_node(g, "pizza", "zz")
    m = merge_pair(parse_penman("(a / x)"), parse_penman("(a / y)"))
    assert find_entity_node(m, "y", "a") == "a"
    assert find_entity_node(m, "y", "a~2") == "a~2"


def test_rename_vars(source_text):
    g = rename_vars(parse_penman(source_text), {"j": "k"})
    assert "k" in g.node_map and g.edges[0].target == "k"
