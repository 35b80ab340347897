from fractions import Fraction

import numpy as np
import pytest

from embedding import (
    ROOT_COORDINATE, EmbeddingConfig, assign_coordinates, cpl, delta_cpl, delta_td, distance,
    dump_rows, reassign_subtrees,
)
from errors import DomainError
from graph import shortest_path_lengths
from trees import TreeConfig, construct_trees, handle_departure


def _embed(g, gamma=1, seed=1, cfg=EmbeddingConfig(), strategy="DIV-RAND"):
    ts = construct_trees(g, TreeConfig(gamma=gamma, strategy=strategy, rng_seed=seed), [0] * gamma)
    return ts, assign_coordinates(ts, cfg, seed)


@pytest.mark.parametrize("x1,x2,expected", [((), (5, 7), 0), ((5, 7), (5, 9), 1), ((5, 7), (5, 7), 2)])
def test_cpl(x1, x2, expected):
    assert cpl(x1, x2) == expected


@pytest.mark.parametrize("x1,x2,expected", [((5, 7), (5, 7), 0), ((5,), (5, 9), 1), ((5, 7), (5, 9), 2)])
def test_delta_td(x1, x2, expected):
    assert delta_td(x1, x2) == expected
    assert delta_td(x2, x1) == expected


def test_delta_cpl_values():
    cfg = EmbeddingConfig()
    assert delta_cpl((5, 7), (5, 7), cfg) == 0
    assert delta_cpl((5, 7), (5, 9), cfg) == Fraction(634, 5)
    assert float(delta_cpl((5, 7), (5, 9), cfg)) == pytest.approx(126.8)


def test_delta_cpl_prefix_dominates_length():
    cfg = EmbeddingConfig()
    for la in range(2, 33):
        for lb in range(1, 33):
            deep = (1, 2) + (0,) * (la - 2)
            shallow = (1, 3) + (0,) * max(lb - 2, 0) if lb >= 2 else (1,)
            target = (1, 2, 99)
            if deep == target:
                continue
            assert delta_cpl(deep, target, cfg) < delta_cpl(shallow, target, cfg)


def test_distance_dispatch():
    cfg = EmbeddingConfig()
    assert distance("TD", (1,), (2,), cfg) == 2
    assert distance("CPL", (1,), (1,), cfg) == 0
    with pytest.raises(DomainError):
        distance("XOR", (1,), (2,), cfg)


def test_root_and_children_coordinates(star_graph):
    ts, coords = _embed(star_graph(4))
    table = coords[0]
    assert table[0] == ROOT_COORDINATE
    assert all(len(table[v]) == 1 for v in range(1, 5))


def test_sibling_collisions_are_redrawn(star_graph):
    # one bit per element: the second child has to redraw until it differs
    cfg = EmbeddingConfig(bits_per_element=1, max_length=4, cpl_constant=4)
    ts, coords = _embed(star_graph(2), cfg=cfg)
    assert {coords[0][1], coords[0][2]} == {(0,), (1,)}


def test_coordinates_longer_than_max_length_are_rejected(path_graph):
    cfg = EmbeddingConfig(max_length=3, cpl_constant=3)
    ts = construct_trees(path_graph(5), TreeConfig(accept_prob=1.0), [0])
    with pytest.raises(DomainError):
        assign_coordinates(ts, cfg, 1)


def test_assignment_is_deterministic(pa_graph):
    g = pa_graph(80)
    assert _embed(g, 2, seed=4)[1] == _embed(g, 2, seed=4)[1]


def test_prefix_property_and_uniqueness(pa_graph):
    g = pa_graph(120, 2, 5)
    ts, coords = _embed(g, gamma=3, seed=5)
    for t, table in zip(ts.trees, coords):
        assert len(set(table)) == g.node_count
        for v in range(g.node_count):
            if v != t.root:
                assert table[v][:-1] == table[t.parent[v]]
            sub = set(t.subtree(v))
            for w in range(0, g.node_count, 9):
                is_prefix = len(table[v]) < len(table[w]) and table[w][:len(table[v])] == table[v]
                assert is_prefix == (w in sub and w != v)


def test_delta_td_is_tree_hop_distance(random_tree):
    g = random_tree(150, 8)
    ts, coords = _embed(g, seed=8)
    table = coords[0]
    for s in range(0, 150, 3):
        hops = shortest_path_lengths(g, s)   # g is the tree itself
        for e in range(150):
            assert delta_td(table[s], table[e]) == hops[e]


def test_tree_metric_is_greedy(random_tree):
    g = random_tree(60, 2)
    ts, coords = _embed(g, seed=2)
    table = coords[0]
    for s in range(60):
        for e in range(60):
            if s != e:
                d = delta_td(table[s], table[e])
                assert any(delta_td(table[v], table[e]) < d for v in g.neighbors(s))


def test_reassign_after_departure(pa_graph):
    g = pa_graph(150, 2, 3)
    cfg = TreeConfig(gamma=2, rng_seed=3)
    ts = construct_trees(g, cfg, [0, 1])
    coords = assign_coordinates(ts, EmbeddingConfig(), 3)
    victim = next(v for v in range(2, 150) if ts.trees[0].children[v])
    rng = np.random.default_rng(3)
    handle_departure(ts, g, victim, cfg, rng)
    for i in range(2):
        reassign_subtrees(coords, ts, i, EmbeddingConfig(), rng)
        t, table = ts.trees[i], coords[i]
        assert table[victim] is None
        for v in range(g.node_count):
            if t.contains(v) and v != t.root:
                assert table[v][:-1] == table[t.parent[v]]
    assert ts.reparented == {}


def test_dump_rows(star_graph):
    ts, coords = _embed(star_graph(2))
    rows = list(dump_rows(coords))
    assert len(rows) == 3
    assert rows[0] == (0, 0, ())
