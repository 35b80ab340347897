# overlay.py
# Kademlia-style overlay whose links are routed over the tree embeddings.

import bisect
import logging
from dataclasses import dataclass, field

import numpy as np

import config
from addresses import AddressKeys, add_ppp_layer, issue_address, make_mac_keys
from adversary import LiveMask
from embedding import random_bits
from errors import AddressStateError, DomainError
from routing import RoutingContext, Target, route_multi

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DhtConfig:
    bucket_size: int = config.BUCKET_SIZE
    alpha: int = config.ALPHA
    replication: int = config.REPLICATION
    id_bits: int = config.KAD_ID_BITS

    def __post_init__(self):
        if self.bucket_size < 1:
            raise DomainError("bucket_size must be >= 1")
        if self.alpha < 1:
            raise DomainError("alpha must be >= 1")
        if self.replication < 1:
            raise DomainError("replication must be >= 1")


@dataclass
class Contact:
    """A table entry: the peer's id and what we last learned of its coordinates."""
    node: int
    kad_id: int
    coords: tuple               # one coordinate per tree, as of the last contact
    addresses: tuple = None     # return addresses matching coords, issued on demand


@dataclass
class DhtNode:
    node: int
    kad_id: int
    buckets: dict = field(default_factory=dict)    # cpl -> list of Contact

    def contacts(self):
        for bucket in self.buckets.values():
            yield from bucket


@dataclass
class LookupOutcome:
    success: bool
    underlay_hops: int
    overlay_hops: int
    reached: int
    overlay_path: list = field(default_factory=list)


@dataclass
class OverlayState:
    g: object
    ts: object
    coords: list
    cfg: DhtConfig
    nodes: list
    live: LiveMask
    rng: np.random.Generator
    keys: list                              # AddressKeys per node (MAC keys)
    subtree_keys: list = None               # subtree_keys[tree][node], for ppp-address
    cipher: object = None
    sorted_ids: list = field(default_factory=list)
    id_owner: dict = field(default_factory=dict)
    storage: dict = field(default_factory=dict)    # key -> set of replica nodes
    evictions: int = 0
    refreshes: int = 0

    def context(self):
        return RoutingContext(self.g, self.coords, self.live, self.subtree_keys, self.cipher)


def xor_distance(a, b):
    return a ^ b


def bucket_index(own, other, bits):
    """Common prefix length of two ids; the bucket `other` belongs to in own's table."""
    return bits - (own ^ other).bit_length()


def _snapshot(coords, v):
    return tuple(table[v] for table in coords)


def _bucket_candidates(state, own_id, j):
    """Ids sharing exactly j leading bits with own_id (bisect over the sorted ids)."""
    bits = state.cfg.id_bits
    shift = bits - j - 1
    lo = ((own_id >> shift) ^ 1) << shift
    hi = lo + (1 << shift)
    a = bisect.bisect_left(state.sorted_ids, lo)
    b = bisect.bisect_left(state.sorted_ids, hi)
    return state.sorted_ids[a:b]


def _fill_bucket(state, dnode, j):
    """Random choice of up to k live candidates, as a successful discovery lookup returns them."""
    ids = [i for i in _bucket_candidates(state, dnode.kad_id, j)
           if state.live.alive[state.id_owner[i]]]
    if not ids:
        dnode.buckets.pop(j, None)
        return
    if len(ids) > state.cfg.bucket_size:
        picks = state.rng.choice(len(ids), size=state.cfg.bucket_size, replace=False)
        ids = [ids[int(p)] for p in sorted(picks)]
    dnode.buckets[j] = [
        Contact(state.id_owner[i], i, _snapshot(state.coords, state.id_owner[i])) for i in ids
    ]


def build_overlay(g, ts, coords, cfg, seed, live=None, subtree_keys=None, cipher=None):
    """
    Random ids for every live node and k-buckets filled from the suitable candidates.
    subtree_keys and cipher are only needed when lookups use encrypted addresses.
    """
    rng = np.random.default_rng(seed)
    live = LiveMask.all_alive(g.node_count) if live is None else live
    ids = set()
    nodes = [None] * g.node_count
    for v in range(g.node_count):
        kad_id = random_bits(rng, cfg.id_bits)
        while kad_id in ids:
            kad_id = random_bits(rng, cfg.id_bits)
        ids.add(kad_id)
        nodes[v] = DhtNode(v, kad_id)

    state = OverlayState(
        g=g, ts=ts, coords=coords, cfg=cfg, nodes=nodes, live=live, rng=rng,
        keys=[AddressKeys(k) for k in make_mac_keys(g.node_count, rng)],
        subtree_keys=subtree_keys, cipher=cipher,
    )
    alive_ids = {nodes[v].kad_id: v for v in np.flatnonzero(live.alive)}
    state.id_owner = alive_ids
    state.sorted_ids = sorted(alive_ids)
    for v in alive_ids.values():
        for j in range(cfg.id_bits):
            _fill_bucket(state, nodes[v], j)
    filled = sum(len(nodes[v].buckets) for v in alive_ids.values()) / max(len(alive_ids), 1)
    log.info("overlay over %d nodes, %.2f filled buckets per node", len(alive_ids), filled)
    return state


def closest_live_nodes(state, key, count=1):
    """Exhaustive closest responsive nodes to key (the lookup's success oracle)."""
    live = [v for i, v in state.id_owner.items() if state.live.responsive(v)]
    return sorted(live, key=lambda v: state.nodes[v].kad_id ^ key)[:count]


def _targets(state, contact, rcfg):
    """Per-tree routing targets for a contact, issuing return addresses if required."""
    if rcfg.addressing == "coordinate":
        return [Target(contact.node, x) for x in contact.coords]
    if contact.addresses is None:
        tables = [list(t) for t in state.coords]
        for i, x in enumerate(contact.coords):
            tables[i][contact.node] = x
        addresses = [
            issue_address(contact.node, i, tables, state.ts, state.keys[contact.node],
                          state.rng, rcfg.embedding)
            for i in range(len(state.coords))]
        if rcfg.addressing == "ppp-address":
            if state.subtree_keys is None:
                raise AddressStateError("encrypted lookups need the subtree keys of every tree")
            addresses = [add_ppp_layer(a, state.subtree_keys[i][contact.node], state.cipher)
                         for i, a in enumerate(addresses)]
        contact.addresses = tuple(addresses)
    return [Target(contact.node, a) for a in contact.addresses]


def _evict(state, holder, contact):
    dnode = state.nodes[holder]
    j = bucket_index(dnode.kad_id, contact.kad_id, state.cfg.id_bits)
    bucket = dnode.buckets.get(j, [])
    if contact in bucket:
        bucket.remove(contact)
        state.evictions += 1
        log.debug("node %d evicted unreachable contact %d", holder, contact.node)
    if not bucket:
        _fill_bucket(state, dnode, j)


def _refresh(state, contact):
    current = _snapshot(state.coords, contact.node)
    if current != contact.coords:
        contact.coords = current
        contact.addresses = None
        state.refreshes += 1
        log.debug("refreshed coordinates of contact %d", contact.node)


def _walk(state, start, first, key, goals, visited, rcfg, rng):
    """
    One recursive walk. stack holds the overlay path of (node, tried contacts); a node
    without a usable closer contact either is a goal or sends a backtrack message to
    its predecessor. Returns (reached goal?, underlay hops, overlay hops, path).
    """
    ctx = state.context()
    stack = [(start, set(), 0)]
    underlay = 0
    overlay_hops = 0
    pending_first = first
    while stack:
        u, tried, arrival_hops = stack[-1]
        if u in goals:
            return True, underlay, overlay_hops, [s[0] for s in stack]
        own = state.nodes[u].kad_id ^ key
        if pending_first is not None:
            options = [pending_first]
            pending_first = None
        else:
            options = sorted(
                (c for c in state.nodes[u].contacts()
                 if c.kad_id ^ key < own and c.node not in tried and c.node not in visited),
                key=lambda c: c.kad_id ^ key)
        if not options:
            stack.pop()
            if stack:
                # the backtrack message retraces the route that delivered the request
                underlay += arrival_hops
                overlay_hops += 1
            continue
        contact = options[0]
        tried.add(contact.node)
        visited.add(contact.node)
        outcome = route_multi(ctx, u, _targets(state, contact, rcfg), rcfg, rng)
        underlay += outcome.hops
        overlay_hops += 1
        if not outcome.success:
            if not state.live.alive[contact.node]:
                _evict(state, u, contact)
            continue
        _refresh(state, contact)
        stack.append((contact.node, set(), outcome.best_hops))
    return False, underlay, overlay_hops, []


def _lookup(state, key, origin, goals, rcfg, rng):
    if not state.live.responsive(origin):
        raise DomainError(f"origin {origin} is not live")
    if origin in goals:
        return LookupOutcome(True, 0, 0, origin, [origin])
    own = state.nodes[origin].kad_id ^ key
    firsts = sorted((c for c in state.nodes[origin].contacts() if c.kad_id ^ key < own),
                    key=lambda c: c.kad_id ^ key)[:state.cfg.alpha]
    visited = {origin}
    result = LookupOutcome(False, 0, 0, origin)
    for contact in firsts:
        if contact.node in visited:
            continue
        ok, underlay, hops, path = _walk(state, origin, contact, key, goals, visited, rcfg, rng)
        result.underlay_hops += underlay
        result.overlay_hops += hops
        if ok and not result.success:
            result.success = True
            result.reached = path[-1]
            result.overlay_path = path
    return result


def dht_lookup(state, key, origin, rcfg, rng):
    """
    Recursive lookup with alpha parallel walks. Succeeds when a walk reaches the live
    node whose id is closest to key; underlay_hops sums every embedding route taken.
    """
    goals = set(closest_live_nodes(state, key, 1))
    return _lookup(state, key, origin, goals, rcfg, rng)


def overlay_stabilize(state, departed, coords=None):
    """
    Marks `departed` as gone and adopts the repaired coordinates. Table entries are not
    touched here: dead contacts are evicted on their first failed contact, changed
    coordinates are refreshed on the next successful one.
    """
    state.live.alive[departed] = False
    if coords is not None:
        state.coords = coords
    state.storage = {k: {v for v in replicas if v != departed}
                     for k, replicas in state.storage.items()}
    return state


def store(state, key, origin, rcfg, rng, replication=None):
    """Looks up key and places it at the `replication` closest live nodes."""
    replication = replication or state.cfg.replication
    outcome = dht_lookup(state, key, origin, rcfg, rng)
    replicas = set(closest_live_nodes(state, key, replication)) if outcome.success else set()
    if replicas:
        state.storage[key] = replicas
    return outcome, replicas


def retrieve(state, key, origin, rcfg, rng):
    """Succeeds on reaching any live replica of key."""
    replicas = {v for v in state.storage.get(key, ()) if state.live.responsive(v)}
    if not replicas:
        return LookupOutcome(False, 0, 0, origin)
    return _lookup(state, key, origin, replicas, rcfg, rng)
