# routing.py
# Greedy routing with backtracking over one or several tree embeddings.

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

import config
from addresses import PppAddress, ReturnAddress, diversity_ppp, diversity_rp
from adversary import LiveMask
from embedding import EmbeddingConfig, distance
from errors import DomainError, ValidationError

log = logging.getLogger(__name__)

ADDRESSING_MODES = ("coordinate", "rp-address", "ppp-address")
EMBEDDING_CHOICES = ("random-tau", "min-neighbor-distance")
ORACLE_MAX_NODES = 200

NO_PROGRESS = "no-progress"
DROPPED = "dropped-by-adversary"
HOP_CAP = "hop-cap"


@dataclass(frozen=True)
class RoutingConfig:
    tau: int = config.TAU            # None routes in every tree
    metric: str = config.METRIC
    addressing: str = config.ADDRESSING
    backtracking: bool = True
    embedding_choice: str = config.EMBEDDING_CHOICE
    max_hops: int = None             # None means HOP_CAP_FACTOR * n
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def __post_init__(self):
        if self.metric not in ("TD", "CPL"):
            raise DomainError(f"unknown metric {self.metric!r}")
        if self.addressing not in ADDRESSING_MODES:
            raise DomainError(f"unknown addressing {self.addressing!r}")
        if self.embedding_choice not in EMBEDDING_CHOICES:
            raise DomainError(f"unknown embedding choice {self.embedding_choice!r}")
        if self.tau is not None and self.tau < 1:
            raise DomainError("tau must be >= 1")
        if self.addressing == "ppp-address" and self.metric != "CPL":
            raise ValidationError("the encryption layer routes with the CPL distance only")

    def tau_for(self, gamma):
        tau = gamma if self.tau is None else self.tau
        if tau > gamma:
            raise ValidationError(f"tau={tau} exceeds gamma={gamma}")
        return tau


@dataclass
class RouteOutcome:
    success: bool
    hops: int
    path: list
    failure_reason: str = None
    best_hops: int = None
    attempts: tuple = ()


@dataclass(frozen=True)
class Target:
    """Where a message goes in one tree: a coordinate or an address, plus the node that recognizes it."""
    destination: int
    value: object


@dataclass
class RoutingContext:
    g: object
    coords: list                 # coords[tree][node]
    live: LiveMask = None
    keys: list = None            # keys[tree][node] -> AddressKeys, for ppp-address
    cipher: object = None

    def __post_init__(self):
        if self.live is None:
            self.live = LiveMask.all_alive(self.g.node_count)


def _scorer(ctx, tree, target, cfg, evaluator):
    """Distance of a node's coordinate to the target as seen by `evaluator`."""
    table = ctx.coords[tree]
    value = target.value
    ecfg = cfg.embedding
    if cfg.addressing == "coordinate":
        return lambda v: distance(cfg.metric, table[v], value, ecfg)
    if cfg.addressing == "rp-address":
        if not isinstance(value, ReturnAddress):
            raise DomainError("rp-address routing needs a ReturnAddress target")
        return lambda v: diversity_rp(value, table[v], cfg.metric, ecfg)
    if not isinstance(value, PppAddress):
        raise DomainError("ppp-address routing needs a PppAddress target")
    keys = ctx.keys[tree][evaluator]
    return lambda v: diversity_ppp(value, table[v], keys, ecfg, ctx.cipher)


def route(ctx, src, target, tree, cfg, rng):
    """
    Routes from src toward target in one tree. Each node remembers which neighbors it
    already forwarded the message to and its predecessor; it forwards to a random closest
    unused neighbor when that neighbor is strictly closer than itself, and otherwise
    hands the message back to its predecessor. A forward to the attacker is lost and
    observed, the sender then tries its next option.
    """
    live = ctx.live
    table = ctx.coords[tree]
    if not live.responsive(src):
        raise DomainError(f"source {src} is not live")
    max_hops = cfg.max_hops or config.HOP_CAP_FACTOR * ctx.g.node_count
    if table[src] is None:
        return RouteOutcome(False, 0, [src], NO_PROGRESS)

    tried = defaultdict(set)
    pred = {}
    path = [src]
    hops = 0
    dropped = False
    u = src
    while u != target.destination:
        if hops >= max_hops:
            log.warning("route %d -> %d hit the hop cap of %d", src, target.destination, max_hops)
            return RouteOutcome(False, hops, path, HOP_CAP)

        score = _scorer(ctx, tree, target, cfg, u)
        options = [v for v in ctx.g.neighbors(u)
                   if live.alive[v] and table[v] is not None and v not in tried[u]]
        nxt = None
        if options:
            own = score(u)
            scored = [(score(v), v) for v in options]
            if cfg.addressing == "ppp-address":
                closer = [v for d, v in scored if d < own]
            else:
                best = min(d for d, _ in scored)
                closer = [v for d, v in scored if d == best] if best < own else []
            if closer:
                nxt = closer[int(rng.integers(len(closer)))]

        if nxt is not None:
            tried[u].add(nxt)
            hops += 1
            if nxt == live.attacker:
                dropped = True
                if not cfg.backtracking:
                    return RouteOutcome(False, hops, path, DROPPED)
                continue
            if nxt in pred or nxt == src:
                # already carrying this message: bounced straight back
                hops += 1
                path.extend((nxt, u))
                continue
            pred[nxt] = u
            u = nxt
            path.append(u)
            continue

        if cfg.backtracking and u != src:
            hops += 1
            u = pred[u]
            path.append(u)
            continue
        return RouteOutcome(False, hops, path, DROPPED if dropped else NO_PROGRESS)

    return RouteOutcome(True, hops, path, best_hops=hops)


def greedy_route(ctx, src, target, tree, cfg, rng):
    """route without backtracking: stops at the first local optimum."""
    return route(ctx, src, target, tree, replace(cfg, backtracking=False), rng)


def choose_embeddings(ctx, src, targets, cfg, rng):
    gamma = len(targets)
    tau = cfg.tau_for(gamma)
    if cfg.embedding_choice == "random-tau":
        return [int(i) for i in rng.permutation(gamma)[:tau]]

    def best_neighbor(i):
        score = _scorer(ctx, i, targets[i], cfg, src)
        table = ctx.coords[i]
        values = [score(v) for v in ctx.g.neighbors(src)
                  if ctx.live.alive[v] and table[v] is not None]
        return min(values) if values else float("inf")

    return sorted(range(gamma), key=lambda i: (best_neighbor(i), i))[:tau]


def route_multi(ctx, src, targets, cfg, rng):
    """
    Sends the message independently in tau of the gamma embeddings. Success if any
    attempt succeeds; hops is the total message cost, best_hops the shortest success.
    """
    chosen = choose_embeddings(ctx, src, targets, cfg, rng)
    attempts = tuple(route(ctx, src, targets[i], i, cfg, rng) for i in chosen)
    hops = sum(a.hops for a in attempts)
    won = [a for a in attempts if a.success]
    if won:
        best = min(won, key=lambda a: a.hops)
        return RouteOutcome(True, hops, best.path, best_hops=best.hops, attempts=attempts)
    reason = DROPPED if any(a.failure_reason == DROPPED for a in attempts) else attempts[0].failure_reason
    return RouteOutcome(False, hops, attempts[0].path, reason, attempts=attempts)


def greedy_path_exists(g, coords, src, dst, metric, live=None, cfg=EmbeddingConfig()):
    """
    True iff a path of responsive nodes leads from src to dst with strictly decreasing
    distance to dst's coordinate at every step. Exhaustive, for small graphs only.
    """
    if g.node_count > ORACLE_MAX_NODES:
        raise DomainError(f"oracle refuses graphs above {ORACLE_MAX_NODES} nodes")
    live = LiveMask.all_alive(g.node_count) if live is None else live
    if not (live.responsive(src) and live.responsive(dst)):
        return False
    if coords[src] is None or coords[dst] is None:
        return False
    goal = coords[dst]
    dist = {}

    def d(v):
        if v not in dist:
            dist[v] = distance(metric, coords[v], goal, cfg)
        return dist[v]

    seen = {src}
    stack = [src]
    while stack:
        u = stack.pop()
        if u == dst:
            return True
        for v in g.neighbors(u):
            if v in seen or not live.responsive(v) or coords[v] is None:
                continue
            if d(v) < d(u):
                seen.add(v)
                stack.append(v)
    return False


def sample_pair(live, labels, rng):
    """Uniform (s, e), s != e, among responsive honest nodes of the same component."""
    nodes = np.flatnonzero(live.alive)
    if live.attacker is not None:
        nodes = nodes[nodes != live.attacker]
    for _ in range(1000):
        s, e = (int(x) for x in rng.choice(nodes, size=2, replace=False))
        if labels[s] == labels[e]:
            return s, e
    raise ValidationError("could not sample a source-destination pair in one component")
