# adversary.py
# Node failures and a single attacker that manipulates the embedding and drops messages.

import logging
import math
from dataclasses import dataclass

import numpy as np

from embedding import random_bits
from errors import DomainError
from graph import Graph

log = logging.getLogger(__name__)

MODES = ("none", "random-failures", "att-rand", "att-root")
MAX_FAILURE_FRACTION = 0.5


@dataclass(frozen=True)
class AdversaryConfig:
    mode: str = "none"
    failure_fraction: float = 0.0
    attacker_edges: int = 0
    seed: int = 0                 # mixed into each run seed for attacker wiring and failures

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown adversary mode {self.mode!r}")
        if not 0 <= self.failure_fraction <= MAX_FAILURE_FRACTION:
            raise DomainError(f"failure fraction must be in [0, 0.5], got {self.failure_fraction}")
        if self.attacking and self.attacker_edges < 1:
            raise DomainError("attack modes need attacker_edges >= 1")

    @property
    def attacking(self):
        return self.mode in ("att-rand", "att-root")


@dataclass
class LiveMask:
    alive: np.ndarray
    attacker: int = None

    @classmethod
    def all_alive(cls, n, attacker=None):
        return cls(np.ones(n, dtype=bool), attacker)

    def responsive(self, v):
        """Alive and willing to forward: the attacker is alive but drops everything."""
        return bool(self.alive[v]) and v != self.attacker

    def honest(self):
        """Alive nodes other than the attacker, as a boolean array."""
        mask = self.alive.copy()
        if self.attacker is not None:
            mask[self.attacker] = False
        return mask

    @property
    def failed_count(self):
        return int((~self.alive).sum())


def inject_failures(g, fraction, seed, live=None):
    """Marks floor(fraction * n) uniformly chosen honest nodes as failed."""
    if not 0 <= fraction <= MAX_FAILURE_FRACTION:
        raise DomainError(f"failure fraction must be in [0, 0.5], got {fraction}")
    live = LiveMask.all_alive(g.node_count) if live is None else LiveMask(live.alive.copy(), live.attacker)
    candidates = np.flatnonzero(live.honest())
    count = int(math.floor(fraction * g.node_count))
    if count == 0:
        return live
    rng = np.random.default_rng(seed)
    # a permutation prefix, so a larger fraction under the same seed fails a superset
    failed = rng.permutation(candidates)[:count]
    live.alive[failed] = False
    log.debug("failed %d of %d nodes", len(failed), g.node_count)
    return live


def attach_attacker(g, x, seed):
    """Adds node n with edges to x distinct random honest nodes; returns (graph, n)."""
    n = g.node_count
    if not 1 <= x <= n:
        raise DomainError(f"attacker edges must be in [1, {n}], got {x}")
    rng = np.random.default_rng(seed)
    targets = sorted(int(v) for v in rng.choice(n, size=x, replace=False))
    adjacency = [list(nbrs) for nbrs in g.adjacency]
    for v in targets:
        adjacency[v].append(n)
    adjacency.append(targets)
    log.info("attacker %d attached to %d honest nodes", n, x)
    return Graph(tuple(tuple(sorted(nbrs)) for nbrs in adjacency)), n


class RandomPrefixes:
    """
    Coordinate hook for the random-prefix attack: every child of the attacker gets an
    independent random prefix as long as the attacker's own coordinate, instead of it.
    """

    def __init__(self, ts, attacker, rng, bits):
        self.ts = ts
        self.attacker = attacker
        self.rng = rng
        self.bits = bits
        self.issued = {}

    def __call__(self, tree, parent, child):
        if parent != self.attacker:
            return None
        level = int(self.ts.trees[tree].level[self.attacker])
        prefix = tuple(random_bits(self.rng, self.bits) for _ in range(level))
        self.issued[(tree, child)] = prefix
        return prefix


def apply_att_rand(ts, attacker, rng, bits):
    """Hook for assign_coordinates/reassign_subtrees; the drop behavior comes from LiveMask.attacker."""
    return RandomPrefixes(ts, attacker, rng, bits)


def apply_att_root(gamma, attacker):
    """Root override: the attacker roots all gamma trees and embeds them honestly."""
    return [attacker] * gamma


def attacker_edge_steps(n, steps=7):
    """x = 2^i * ceil(log2 n) for 0 <= i < steps, capped at n."""
    base = math.ceil(math.log2(n))
    return [min(base * 2 ** i, n) for i in range(steps)]
