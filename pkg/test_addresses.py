import hashlib

import numpy as np
import pytest

from addresses import (
    DESCENDANT, NON_NEIGHBOR, AddressKeys, LocalView, PppAddress, ReturnAddress, SubtreeCipher,
    add_ppp_layer, candidate_receiver_set, cascade_cpl, compute_mac, diversity_ppp, diversity_rp,
    distribute_subtree_keys, from_bytes, generate_rp, h, hash_cascade, issue_address,
    make_mac_keys, pad, ppp_cpl, ppp_partial_decrypt, prng, to_bytes, verify_mac,
)
from embedding import EmbeddingConfig, assign_coordinates, cpl, delta_cpl, delta_td
from errors import AddressStateError, DomainError, UnsupportedOperationError
from graph import from_edges
from trees import TreeConfig, construct_trees

KEYS = AddressKeys(b"k" * 32)


def _tree(g, seed, cfg=EmbeddingConfig()):
    ts = construct_trees(g, TreeConfig(rng_seed=seed), [0])
    return ts, assign_coordinates(ts, cfg, seed)


def test_hash_is_truncated_sha256():
    expected = int.from_bytes(hashlib.sha256((7).to_bytes(16, "big")).digest(), "big") & ((1 << 128) - 1)
    assert h(7, 128) == expected


def test_hash_cascade_pinned_vector():
    # 8-bit elements: d1 = h(5 ^ 1), d2 = h(d1 ^ 2), d3 = h(d2 ^ 3)
    assert hash_cascade((1, 2, 3), 5, 8) == (113, 137, 144)


def test_cascade_prefix_agreement():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        common = tuple(int(a) for a in rng.integers(0, 2 ** 16, size=rng.integers(0, 6)))
        x1 = common + tuple(int(a) for a in rng.integers(0, 2 ** 16, size=rng.integers(0, 4)))
        x2 = common + tuple(int(a) for a in rng.integers(0, 2 ** 16, size=rng.integers(0, 4)))
        k = int(rng.integers(2 ** 32))
        h1, h2 = hash_cascade(x1, k, 128), hash_cascade(x2, k, 128)
        assert cpl(h1, h2) == cpl(x1, x2)
        assert cascade_cpl(h1, x2, k, 128) == cpl(x1, x2)


def test_padding_is_deterministic_per_seed():
    assert pad((1, 2), 9, 5, 128)[:2] == (1, 2)
    assert pad((1, 2), 9, 5, 128) == pad((1, 2), 9, 5, 128)
    assert pad((1, 2), 9, 5, 128)[2] == prng(9, 3, 128)
    assert len(pad((), 9, 5, 128)) == 5


def test_rp_diversity_of_issuer_is_padding_length():
    cfg = EmbeddingConfig()
    x = (11, 22, 33)
    addr = generate_rp(x, KEYS, set(), s=1, s_pad=2, cfg=cfg)
    assert len(addr.digest_vector) == 128
    assert diversity_rp(addr, x, "TD", cfg) == 128 - len(x)


def test_padding_avoids_children_elements():
    cfg = EmbeddingConfig(bits_per_element=2, max_length=6, cpl_constant=6)
    x = (1,)
    # three of the four possible 2-bit values are taken by children
    children = {0, 1, 2}
    addr = generate_rp(x, KEYS, children, s=3, s_pad=4, cfg=cfg)
    # the only free value, 3, must be the first padding element
    assert hash_cascade(x + (3,), addr.routing_seed, 2) == addr.digest_vector[:2]


def test_generate_rp_rejects_long_coordinate():
    cfg = EmbeddingConfig(max_length=2, cpl_constant=2)
    with pytest.raises(DomainError):
        generate_rp((1, 2, 3), KEYS, set(), 1, 2, cfg)


def test_mac_accepts_own_and_rejects_bit_flips():
    cfg = EmbeddingConfig(bits_per_element=64, max_length=8, cpl_constant=8)
    addr = generate_rp((4, 5), KEYS, set(), 6, 7, cfg)
    assert verify_mac(addr, KEYS, cfg)
    assert not verify_mac(addr, AddressKeys(b"x" * 32), cfg)
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        j = int(rng.integers(len(addr.digest_vector)))
        bit = int(rng.integers(64))
        vector = list(addr.digest_vector)
        vector[j] ^= 1 << bit
        forged = ReturnAddress(tuple(vector), addr.routing_seed, addr.mac_tag, 0)
        assert not verify_mac(forged, KEYS, cfg)


def test_default_mac_width_comes_from_config():
    forged = ReturnAddress(((1 << 127) | 5, (1 << 127) | 9), 1, 0, 0)
    assert not verify_mac(forged, KEYS)
    # a genuine 128-bit tag whose leading byte is zero
    vector = next(v for v in ((i, i + 1) for i in range(1, 20_000))
                  if compute_mac(KEYS.mac_key, v, 128) >> 120 == 0)
    short = ReturnAddress(vector, 1, compute_mac(KEYS.mac_key, vector, 128), 0)
    assert verify_mac(short, KEYS)
    oversized = ReturnAddress((1 << 130,), 1, 0, 0)
    assert not verify_mac(oversized, KEYS)


def _check_route_preservation(random_tree, metric, trees, n, addresses):
    cfg = EmbeddingConfig(bits_per_element=32, max_length=48, cpl_constant=48)
    rng = np.random.default_rng(7)
    for seed in range(trees):
        g = random_tree(n, seed)
        ts, coords = _tree(g, seed, cfg)
        table = coords[0]
        for _ in range(addresses):
            issuer = int(rng.integers(n))
            addr = issue_address(issuer, 0, coords, ts, KEYS, rng, cfg)
            cands = [int(v) for v in rng.choice(n, size=6, replace=False)]
            if metric == "TD":
                true = {v: delta_td(table[v], table[issuer]) for v in cands}
            else:
                true = {v: delta_cpl(table[v], table[issuer], cfg) for v in cands}
            div = {v: diversity_rp(addr, table[v], metric, cfg) for v in cands}
            best_true = min(true.values())
            best_div = min(div.values())
            assert {v for v in cands if true[v] == best_true} == {v for v in cands if div[v] == best_div}


@pytest.mark.parametrize("metric", ["TD", "CPL"])
def test_route_preservation(random_tree, metric):
    """The closest candidates under the address are the closest under the coordinate."""
    _check_route_preservation(random_tree, metric, trees=10, n=60, addresses=40)


@pytest.mark.slow
@pytest.mark.parametrize("metric", ["TD", "CPL"])
def test_route_preservation_at_scale(random_tree, metric):
    _check_route_preservation(random_tree, metric, trees=50, n=200, addresses=1000)


def test_subtree_keys_follow_levels(path_graph):
    g = path_graph(5)
    ts = construct_trees(g, TreeConfig(accept_prob=1.0), [0])
    keys = distribute_subtree_keys(ts, 0, make_mac_keys(5, np.random.default_rng(0)),
                                   np.random.default_rng(1))
    assert keys[0].subtree_keys == () and keys[0].own_key is None
    assert keys[1].subtree_keys == () and keys[1].own_key is not None
    assert keys[3].subtree_keys == (keys[1].own_key, keys[2].own_key)
    assert keys[4].own_key is None
    assert [k.level for k in keys] == [0, 1, 2, 3, 4]


def test_cipher_round_trip_and_wrong_key():
    cipher = SubtreeCipher(128)
    k1, k2 = b"a" * 16, b"b" * 16
    assert cipher.decrypt(k1, cipher.encrypt(k1, 12345)) == 12345
    assert cipher.decrypt(k2, cipher.encrypt(k1, 12345)) != 12345


def test_ppp_layer_requires_keys():
    addr = generate_rp((1, 2, 3), KEYS, set(), 1, 2)
    with pytest.raises(AddressStateError):
        add_ppp_layer(addr, AddressKeys(b"k" * 32, level=3), SubtreeCipher(128))


def test_ppp_diversity_rejects_td():
    addr = PppAddress((0,) * 128, 1, 0, 0)
    with pytest.raises(UnsupportedOperationError):
        diversity_ppp(addr, (1,), KEYS, EmbeddingConfig(), SubtreeCipher(128), metric="TD")


def test_ppp_lower_bound(pa_graph):
    """The evaluator learns the common prefix up to one past its own, never more."""
    g = pa_graph(120, 2, 9)
    ecfg = EmbeddingConfig(bits_per_element=64, max_length=64, cpl_constant=64)
    ts, coords = _tree(g, 9, ecfg)
    table = coords[0]
    rng = np.random.default_rng(9)
    keys = distribute_subtree_keys(ts, 0, make_mac_keys(120, rng), rng)
    cipher = SubtreeCipher(64)
    for _ in range(1000):
        issuer, evaluator, cand = (int(v) for v in rng.integers(120, size=3))
        addr = add_ppp_layer(issue_address(issuer, 0, coords, ts, keys[issuer], rng, ecfg),
                             keys[issuer], cipher)
        assert verify_mac(addr, keys[issuer], ecfg)
        lam = cpl(table[evaluator], table[issuer])
        learned = ppp_cpl(addr, table[cand], keys[evaluator], ecfg, cipher)
        true = cpl(table[cand], table[issuer])
        assert learned == min(true, lam + 1, len(table[cand]))


def test_ppp_deeper_candidate_is_closer(path_graph):
    g = path_graph(6)
    ts = construct_trees(g, TreeConfig(accept_prob=1.0), [0])
    coords = assign_coordinates(ts, EmbeddingConfig(), 1)
    rng = np.random.default_rng(1)
    keys = distribute_subtree_keys(ts, 0, make_mac_keys(6, rng), rng)
    cipher = SubtreeCipher(128)
    addr = add_ppp_layer(issue_address(5, 0, coords, ts, keys[5], rng), keys[5], cipher)
    own = diversity_ppp(addr, coords[0][2], keys[2], EmbeddingConfig(), cipher)
    deeper = diversity_ppp(addr, coords[0][3], keys[2], EmbeddingConfig(), cipher)
    assert deeper < own
    assert ppp_partial_decrypt(addr, keys[2], cipher)[4:] == addr.encrypted_vector[4:]


def test_deniability_witness():
    """A receiver and its child look the same to a neighbor of the receiver."""
    # 0 - 1 - 2 (receiver) - 3, attacker 1 sees 0 and 2
    g = from_edges([(0, 1), (1, 2), (2, 3)], node_count=4)
    ts = construct_trees(g, TreeConfig(accept_prob=1.0), [0])
    coords = assign_coordinates(ts, EmbeddingConfig(), 2)
    rng = np.random.default_rng(2)
    view = LocalView(1, {0: (coords[0][0],), 2: (coords[0][2],)})
    for receiver in (2, 3):
        addr = issue_address(receiver, 0, coords, ts, KEYS, rng)
        result = candidate_receiver_set([addr], view)
        assert result == frozenset({2, DESCENDANT})
        assert len(result) >= 2


def test_non_neighbor_verdict_when_trees_disagree():
    coords_a = [[(), (1,), (2,), (1, 5)], [(), (3,), (4,), (4, 6)]]
    # receiver 3 sits below 1 in the first tree and below 2 in the second
    a0 = generate_rp(coords_a[0][3], KEYS, set(), 1, 2, tree_index=0)
    a1 = generate_rp(coords_a[1][3], KEYS, set(), 3, 4, tree_index=1)
    view = LocalView(0, {1: (coords_a[0][1], coords_a[1][1]), 2: (coords_a[0][2], coords_a[1][2])})
    assert candidate_receiver_set([a0, a1], view) == frozenset({NON_NEIGHBOR})


def test_binary_layout():
    cfg = EmbeddingConfig(bits_per_element=16, max_length=2, cpl_constant=2)
    addr = ReturnAddress((0x0102, 0x0304), 0x0506, 0x0708, 0)
    data = to_bytes(addr, cfg)
    assert data == bytes([2, 1, 4, 3, 6, 5, 8, 7])
    assert from_bytes(data, cfg) == addr
    with pytest.raises(DomainError):
        from_bytes(data[:-1], cfg)
