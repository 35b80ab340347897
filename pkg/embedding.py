# embedding.py
# Modified PIE coordinates over each spanning tree and the two tree distances.

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

import config
from errors import DomainError

log = logging.getLogger(__name__)

ROOT_COORDINATE = ()


@dataclass(frozen=True)
class EmbeddingConfig:
    bits_per_element: int = config.BITS_PER_ELEMENT
    max_length: int = config.ADDRESS_LENGTH
    cpl_constant: int = config.ADDRESS_LENGTH

    def __post_init__(self):
        if self.bits_per_element < 1:
            raise DomainError("bits_per_element must be >= 1")
        if self.max_length < 1 or self.cpl_constant < 1:
            raise DomainError("max_length and cpl_constant must be >= 1")


def random_bits(rng, bits):
    """Uniform `bits`-bit integer drawn from a numpy Generator."""
    raw = int.from_bytes(rng.bytes((bits + 7) // 8), "big")
    return raw & ((1 << bits) - 1)


def _draw_element(rng, bits, taken):
    a = random_bits(rng, bits)
    while a in taken:
        log.debug("sibling collision on element %d, redrawing", a)
        a = random_bits(rng, bits)
    taken.add(a)
    return a


def _embed_subtree(t, top, coords, cfg, rng, fabricate, tree_index):
    """Fills coords for top's descendants; top's own coordinate must already be set."""
    taken = {}
    for v in t.subtree(top)[1:]:
        p = int(t.parent[v])
        siblings = taken.get(p)
        if siblings is None:
            siblings = {coords[c][-1] for c in t.children[p] if coords[c] is not None and c != v}
            taken[p] = siblings
        prefix = fabricate(tree_index, p, v) if fabricate else None
        if prefix is None:
            prefix = coords[p]
        coords[v] = prefix + (_draw_element(rng, cfg.bits_per_element, siblings),)
        if len(coords[v]) >= cfg.max_length:
            raise DomainError(
                f"coordinate length {len(coords[v])} reaches max_length {cfg.max_length}")


def assign_coordinates(ts, cfg, rng, fabricate=None):
    """
    Returns coords[tree][node]: () for the root, parent coordinate plus one fresh random
    b-bit element for everyone else (None outside the tree). Sibling collisions are
    redrawn. `fabricate(tree, parent, child)` may return a prefix that replaces the
    parent's coordinate for that child.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    out = []
    for i, t in enumerate(ts.trees):
        coords = [None] * ts.node_count
        coords[t.root] = ROOT_COORDINATE
        _embed_subtree(t, t.root, coords, cfg, rng, fabricate, i)
        out.append(coords)
    return out


def reassign_subtrees(coords, ts, tree, cfg, rng, fabricate=None):
    """
    After stabilization: every node recorded in ts.reparented[tree] draws a new last
    element under its new parent and its subtree is re-prefixed. Nodes that left the
    tree lose their coordinate. Returns the nodes whose coordinate changed.
    """
    t = ts.trees[tree]
    table = coords[tree]
    changed = []
    for v in range(ts.node_count):
        if table[v] is not None and (not ts.members[v] or not t.contains(v)):
            table[v] = None
            changed.append(v)

    for node in ts.reparented.pop(tree, []):
        if not t.contains(node):
            continue
        if node == t.root:
            table[node] = ROOT_COORDINATE
        else:
            p = int(t.parent[node])
            siblings = {table[c][-1] for c in t.children[p] if c != node and table[c] is not None}
            prefix = fabricate(tree, p, node) if fabricate else None
            prefix = table[p] if prefix is None else prefix
            table[node] = prefix + (_draw_element(rng, cfg.bits_per_element, siblings),)
        for c in t.children[node]:
            table[c] = None
        _embed_subtree(t, node, table, cfg, rng, fabricate, tree)
        changed.extend(t.subtree(node))
    return changed


def cpl(x1, x2):
    n = 0
    for a, b in zip(x1, x2):
        if a != b:
            break
        n += 1
    return n


def delta_td(x1, x2):
    return len(x1) + len(x2) - 2 * cpl(x1, x2)


def delta_cpl(x1, x2, cfg):
    """L - cpl - 1/(|x1|+|x2|+1) for distinct coordinates, 0 for equal ones (exact)."""
    if tuple(x1) == tuple(x2):
        return Fraction(0)
    return Fraction(cfg.cpl_constant - cpl(x1, x2)) - Fraction(1, len(x1) + len(x2) + 1)


def distance(metric, x1, x2, cfg):
    if metric == "TD":
        return delta_td(x1, x2)
    if metric == "CPL":
        return delta_cpl(x1, x2, cfg)
    raise DomainError(f"unknown metric {metric!r}")


def dump_rows(coords):
    """(node, tree, coordinate) rows for debugging."""
    for i, table in enumerate(coords):
        for v, x in enumerate(table):
            if x is not None:
                yield v, i, x
