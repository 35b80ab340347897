import numpy as np
import pytest

from addresses import (
    AddressKeys, SubtreeCipher, add_ppp_layer, distribute_subtree_keys, issue_address, make_mac_keys,
)
from adversary import LiveMask, inject_failures
from embedding import EmbeddingConfig, assign_coordinates, delta_td
from errors import DomainError, ValidationError
from graph import components, from_edges, generate_synthetic
from routing import (
    HOP_CAP, NO_PROGRESS, RoutingConfig, RoutingContext, Target, choose_embeddings,
    greedy_path_exists, greedy_route, route, route_multi, sample_pair,
)
from trees import TreeConfig, construct_trees

UNCAPPED = 10 ** 6


def _embed(g, gamma=1, seed=1, cfg=EmbeddingConfig()):
    ts = construct_trees(g, TreeConfig(gamma=gamma, rng_seed=seed), [0] * gamma)
    return ts, assign_coordinates(ts, cfg, seed)


def _targets(coords, dst):
    return [Target(dst, table[dst]) for table in coords]


def _live_pairs(g, live):
    labels = components(g, live.alive)
    alive = np.flatnonzero(live.alive)
    for s in alive:
        for e in alive:
            if s != e and labels[s] == labels[e]:
                yield int(s), int(e)


def test_route_to_self_is_free(path_graph):
    g = path_graph(3)
    _, coords = _embed(g)
    out = route(RoutingContext(g, coords), 1, Target(1, coords[0][1]), 0, RoutingConfig(), np.random.default_rng(0))
    assert out.success and out.hops == 0 and out.path == [1]


def test_hops_on_a_tree_are_tree_distance(random_tree):
    g = random_tree(50, 4)
    _, coords = _embed(g, seed=4)
    ctx = RoutingContext(g, coords)
    rng = np.random.default_rng(4)
    for s in range(0, 50, 5):
        for e in range(50):
            out = route(ctx, s, Target(e, coords[0][e]), 0, RoutingConfig(), rng)
            assert out.success
            assert out.hops == delta_td(coords[0][s], coords[0][e])
            assert out.path[0] == s and out.path[-1] == e


def test_ring_with_failure_matches_oracle(cycle_graph):
    g = cycle_graph(6)
    _, coords = _embed(g)
    alive = np.ones(6, dtype=bool)
    alive[2] = False
    live = LiveMask(alive)
    ctx = RoutingContext(g, coords, live)
    cfg = RoutingConfig(max_hops=UNCAPPED)
    rng = np.random.default_rng(0)
    for s, e in _live_pairs(g, live):
        out = route(ctx, s, Target(e, coords[0][e]), 0, cfg, rng)
        assert out.success == greedy_path_exists(g, coords[0], s, e, "TD", live)
        if not out.success:
            assert out.failure_reason == NO_PROGRESS


@pytest.mark.slow
@pytest.mark.parametrize("metric", ["TD", "CPL"])
def test_backtracking_finds_every_greedy_path(metric):
    for seed in range(10):
        g = generate_synthetic("preferential-attachment", 40, 2, seed)
        _, coords = _embed(g, seed=seed)
        live = inject_failures(g, 0.4 * seed / 9, seed)
        ctx = RoutingContext(g, coords, live)
        cfg = RoutingConfig(metric=metric, max_hops=UNCAPPED)
        rng = np.random.default_rng(seed)
        for s, e in _live_pairs(g, live):
            out = route(ctx, s, Target(e, coords[0][e]), 0, cfg, rng)
            assert out.success == greedy_path_exists(g, coords[0], s, e, metric, live)


@pytest.mark.parametrize("metric", ["TD", "CPL"])
def test_addresses_follow_the_coordinate_route(pa_graph, metric):
    g = pa_graph(80, 2, 6)
    ts, coords = _embed(g, seed=6)
    ctx = RoutingContext(g, coords, inject_failures(g, 0.2, 6))
    plain = RoutingConfig(metric=metric)
    hidden = RoutingConfig(metric=metric, addressing="rp-address")
    keys = make_mac_keys(80, np.random.default_rng(0))
    issue_rng = np.random.default_rng(1)
    for s, e in list(_live_pairs(g, ctx.live))[::37]:
        addr = issue_address(e, 0, coords, ts, AddressKeys(keys[e]), issue_rng)
        a = route(ctx, s, Target(e, coords[0][e]), 0, plain, np.random.default_rng(s * 100 + e))
        b = route(ctx, s, Target(e, addr), 0, hidden, np.random.default_rng(s * 100 + e))
        assert (a.success, a.hops, a.path) == (b.success, b.hops, b.path)


def test_encrypted_addresses_route_along_the_tree(random_tree):
    g = random_tree(60, 5)
    ecfg = EmbeddingConfig(bits_per_element=64, max_length=64, cpl_constant=64)
    ts, coords = _embed(g, seed=5, cfg=ecfg)
    rng = np.random.default_rng(5)
    keys = distribute_subtree_keys(ts, 0, make_mac_keys(60, rng), rng)
    cipher = SubtreeCipher(64)
    ctx = RoutingContext(g, coords, keys=[keys], cipher=cipher)
    cfg = RoutingConfig(metric="CPL", addressing="ppp-address", embedding=ecfg)
    for s in range(0, 60, 7):
        for e in range(0, 60, 3):
            addr = add_ppp_layer(issue_address(e, 0, coords, ts, keys[e], rng, ecfg), keys[e], cipher)
            out = route(ctx, s, Target(e, addr), 0, cfg, rng)
            assert out.success
            assert out.hops == delta_td(coords[0][s], coords[0][e])


def test_encrypted_addresses_need_cpl():
    with pytest.raises(ValidationError):
        RoutingConfig(metric="TD", addressing="ppp-address")


def test_greedy_success_implies_backtracking_success(pa_graph):
    g = pa_graph(100, 2, 3)
    _, coords = _embed(g, seed=3)
    ctx = RoutingContext(g, coords, inject_failures(g, 0.3, 3))
    cfg = RoutingConfig()
    for s, e in list(_live_pairs(g, ctx.live))[::11]:
        greedy = greedy_route(ctx, s, Target(e, coords[0][e]), 0, cfg, np.random.default_rng(0))
        full = route(ctx, s, Target(e, coords[0][e]), 0, cfg, np.random.default_rng(0))
        if greedy.success:
            assert full.success and full.hops == greedy.hops


def test_hop_cap(path_graph):
    g = path_graph(5)
    _, coords = _embed(g)
    out = route(RoutingContext(g, coords), 0, Target(4, coords[0][4]), 0,
                RoutingConfig(max_hops=2), np.random.default_rng(0))
    assert not out.success
    assert out.failure_reason == HOP_CAP
    assert out.hops == 2


def test_dead_source_is_rejected(path_graph):
    g = path_graph(3)
    _, coords = _embed(g)
    live = LiveMask(np.array([False, True, True]))
    with pytest.raises(DomainError):
        route(RoutingContext(g, coords, live), 0, Target(2, coords[0][2]), 0,
              RoutingConfig(), np.random.default_rng(0))


def test_success_is_monotone_in_tau(pa_graph):
    g = pa_graph(150, 2, 8)
    _, coords = _embed(g, gamma=3, seed=8)
    ctx = RoutingContext(g, coords, inject_failures(g, 0.35, 8))
    for s, e in list(_live_pairs(g, ctx.live))[::53]:
        previous = False
        for tau in (1, 2, 3):
            out = route_multi(ctx, s, _targets(coords, e), RoutingConfig(tau=tau),
                              np.random.default_rng(s + 7 * e))
            assert out.success or not previous
            previous = out.success
            assert len(out.attempts) == tau
            assert out.hops == sum(a.hops for a in out.attempts)


def test_route_multi_reports_best_attempt(pa_graph):
    g = pa_graph(60)
    _, coords = _embed(g, gamma=3, seed=2)
    ctx = RoutingContext(g, coords)
    cfg = RoutingConfig(embedding_choice="min-neighbor-distance", tau=2)
    out = route_multi(ctx, 5, _targets(coords, 40), cfg, np.random.default_rng(0))
    assert out.success
    assert out.best_hops == min(a.hops for a in out.attempts if a.success)
    assert out.best_hops <= out.hops


def test_min_neighbor_distance_prefers_the_tree_with_an_adjacent_target():
    # in tree 0 node 2 hangs below 1 (a neighbor of 3); in tree 1 it hangs below 0
    g = from_edges([(0, 1), (1, 2), (0, 2), (1, 3)], node_count=4)
    coords = [
        [(), (1,), (1, 2), (1, 3)],
        [(), (1,), (2,), (1, 3)],
    ]
    targets = [Target(2, coords[0][2]), Target(2, coords[1][2])]
    ctx = RoutingContext(g, coords)
    cfg = RoutingConfig(embedding_choice="min-neighbor-distance", tau=1)
    assert choose_embeddings(ctx, 3, targets, cfg, np.random.default_rng(0)) == [0]


def test_tau_above_gamma_is_rejected(path_graph):
    g = path_graph(4)
    _, coords = _embed(g)
    with pytest.raises(ValidationError):
        route_multi(RoutingContext(g, coords), 0, _targets(coords, 3), RoutingConfig(tau=2),
                    np.random.default_rng(0))


def test_oracle_refuses_large_graphs():
    g = generate_synthetic("preferential-attachment", 201, 2, 1)
    coords = [()] * 201
    with pytest.raises(DomainError):
        greedy_path_exists(g, coords, 0, 1, "TD")


def test_sample_pair_stays_in_one_component():
    g = from_edges([(0, 1), (2, 3), (3, 4)], node_count=5)
    live = LiveMask.all_alive(5, attacker=4)
    labels = components(g, live.alive)
    rng = np.random.default_rng(0)
    for _ in range(50):
        s, e = sample_pair(live, labels, rng)
        assert s != e and labels[s] == labels[e]
        assert 4 not in (s, e)
