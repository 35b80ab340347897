# trees.py
# Parallel spanning trees built by the round-based invitation protocol, and
# their local repair when nodes join or leave.

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

import config
from errors import ConstructionError, DomainError, JoinError, RootDepartureError
from graph import components, diameter_estimate

log = logging.getLogger(__name__)

STRATEGIES = ("DIV-RAND", "DIV-DEP", "BFS")
NO_NODE = -1


@dataclass(frozen=True)
class TreeConfig:
    gamma: int = config.GAMMA
    accept_prob: float = config.ACCEPT_PROB
    strategy: str = config.STRATEGY
    rng_seed: int = config.MASTER_SEED

    def __post_init__(self):
        if self.gamma < 1:
            raise DomainError(f"gamma must be >= 1, got {self.gamma}")
        if not 0 < self.accept_prob <= 1:
            raise DomainError(f"accept_prob must be in (0, 1], got {self.accept_prob}")
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.strategy!r}")


class Tree:
    """One rooted spanning tree. level == -1 marks nodes outside the tree."""

    def __init__(self, n, root):
        self.root = root
        self.parent = np.full(n, NO_NODE, dtype=np.int64)
        self.level = np.full(n, -1, dtype=np.int64)
        self.join_round = np.full(n, -1, dtype=np.int64)
        self.children = [[] for _ in range(n)]
        self.level[root] = 0
        self.join_round[root] = 0

    def contains(self, v):
        return self.level[v] >= 0

    def copy(self):
        t = Tree.__new__(Tree)
        t.root = self.root
        t.parent = self.parent.copy()
        t.level = self.level.copy()
        t.join_round = self.join_round.copy()
        t.children = [list(c) for c in self.children]
        return t

    def subtree(self, node):
        """node followed by all its descendants, parents before children."""
        out = [node]
        i = 0
        while i < len(out):
            out.extend(self.children[out[i]])
            i += 1
        return out


@dataclass
class TreeSet:
    trees: list
    pc: list                 # per node: Counter neighbor -> number of trees it is our parent in
    members: np.ndarray      # nodes currently taking part in the trees
    round: int = 0
    reparented: dict = field(default_factory=dict)   # tree -> nodes whose parent changed

    @property
    def gamma(self):
        return len(self.trees)

    @property
    def node_count(self):
        return len(self.members)

    def tree(self, index):
        if not 0 <= index < len(self.trees):
            raise DomainError(f"tree index {index} outside [0, {len(self.trees)})")
        return self.trees[index]

    def roots(self):
        return [t.root for t in self.trees]

    def copy(self):
        return TreeSet(
            trees=[t.copy() for t in self.trees],
            pc=[Counter(c) for c in self.pc],
            members=self.members.copy(),
            round=self.round,
            reparented={i: list(v) for i, v in self.reparented.items()},
        )

    def dump(self):
        """Diagnostic text: one 'tree node parent level' row per member."""
        rows = ["tree node parent level"]
        for i, t in enumerate(self.trees):
            for v in np.flatnonzero(t.level >= 0):
                rows.append(f"{i} {v} {t.parent[v]} {t.level[v]}")
        return "\n".join(rows) + "\n"


def parent_count(ts, node, neighbor):
    return ts.pc[node][neighbor]


def elect_root(g, policy, seed, candidates=None):
    """
    policy: "random", "max-degree" or "fixed:<id>" (an int is read as fixed).
    candidates optionally restricts the choice (e.g. honest nodes only).
    """
    if g.node_count == 0:
        raise DomainError("cannot elect a root in an empty graph")
    if isinstance(policy, (int, np.integer)):
        policy = f"fixed:{policy}"
    pool = list(range(g.node_count)) if candidates is None else sorted(candidates)

    if policy.startswith("fixed:"):
        node = int(policy.split(":", 1)[1])
        if not 0 <= node < g.node_count:
            raise DomainError(f"fixed root {node} outside [0, {g.node_count})")
        return node
    if policy == "max-degree":
        return max(pool, key=lambda v: (g.degree(v), -v))
    if policy == "random":
        rng = np.random.default_rng(seed)
        return int(pool[rng.integers(len(pool))])
    raise DomainError(f"unknown root policy {policy!r}")


# ---------------------------
# Invitation protocol
# ---------------------------

@dataclass
class ConstructionState:
    g: object
    ts: TreeSet
    cfg: TreeConfig
    rng: np.random.Generator
    building: list                      # tree indices under construction
    invitations: dict                   # node -> set of (tree, inviter)
    just_joined: list                   # (tree, node) joined in the current round
    round_cap: int
    rounds: int = 0

    @property
    def finished(self):
        members = self.ts.members
        return all(np.all(self.ts.trees[i].level[members] >= 0) for i in self.building)


def _attach(ts, i, u, w, join_round):
    t = ts.trees[i]
    t.parent[u] = w
    t.level[u] = t.level[w] + 1
    t.join_round[u] = join_round
    t.children[w].append(u)
    ts.pc[u][w] += 1


def _detach(ts, i, u):
    t = ts.trees[i]
    w = t.parent[u]
    if w != NO_NODE:
        t.children[w].remove(u)
        ts.pc[u][w] -= 1
        if ts.pc[u][w] == 0:
            del ts.pc[u][w]
    t.parent[u] = NO_NODE


def select_invitation(u, invitations, ts, g, strategy, q, rng):
    """
    One decision of the invitation protocol for node u.
    Accepts any invitation from a neighbor whose parent count is minimal among all
    live neighbors; otherwise, with probability q, the invitation with the lowest
    parent count among the inviters. Returns (tree, inviter) or None.
    """
    if not invitations:
        return None
    pc = ts.pc[u]
    live = [v for v in g.neighbors(u) if ts.members[v]]
    min_all = min(pc[v] for v in live)
    chosen = [inv for inv in invitations if pc[inv[1]] == min_all]
    if not chosen:
        if rng.random() > q:
            return None
        min_inv = min(pc[w] for _, w in invitations)
        chosen = [inv for inv in invitations if pc[inv[1]] == min_inv]
    if strategy == "DIV-DEP":
        lowest = min(ts.trees[i].level[w] for i, w in chosen)
        chosen = [(i, w) for i, w in chosen if ts.trees[i].level[w] == lowest]
    return chosen[int(rng.integers(len(chosen)))]


def _round_cap(g, gamma, q):
    return int(math.ceil(config.ROUND_CAP_FACTOR * gamma / q * diameter_estimate(g))) + 1


def _check_connected(g, members, roots):
    labels = components(g, members)
    if len(set(labels[members].tolist())) != 1:
        raise ConstructionError("graph is disconnected; pass its giant component")
    for r in roots:
        if not members[r]:
            raise ConstructionError(f"root {r} is not a live member")


def start_construction(g, cfg, ts, building, rng):
    """Roots of the trees being built join in round ts.round and invite their neighbors."""
    invitations = {}
    for i in building:
        root = ts.trees[i].root
        for v in g.neighbors(root):
            if ts.members[v] and not ts.trees[i].contains(v):
                invitations.setdefault(v, set()).add((i, root))
    return ConstructionState(
        g=g, ts=ts, cfg=cfg, rng=rng, building=list(building),
        invitations=invitations, just_joined=[],
        round_cap=_round_cap(g, len(building), cfg.accept_prob),
    )


def tree_round(state):
    """
    One synchronous round: every node decides on the invitations it holds, then the
    nodes that joined in this round invite their neighbors for the next round.
    """
    ts, g = state.ts, state.g
    ts.round += 1
    state.rounds += 1
    for u in sorted(state.invitations):
        pending = sorted(state.invitations[u])
        pick = select_invitation(u, pending, ts, g, state.cfg.strategy,
                                 state.cfg.accept_prob, state.rng)
        if pick is None:
            continue
        i, w = pick
        _attach(ts, i, u, w, ts.round)
        state.just_joined.append((i, u))
        state.invitations[u] = {inv for inv in state.invitations[u] if inv[0] != i}

    for i, w in state.just_joined:
        for v in g.neighbors(w):
            if ts.members[v] and not ts.trees[i].contains(v):
                state.invitations.setdefault(v, set()).add((i, w))
    state.just_joined = []
    state.invitations = {u: inv for u, inv in state.invitations.items() if inv}
    return state


def _run_rounds(state):
    while not state.finished:
        if state.rounds >= state.round_cap:
            raise ConstructionError(
                f"tree construction hit the round cap of {state.round_cap} rounds")
        tree_round(state)
        log.debug("round %d: %d nodes hold invitations", state.ts.round, len(state.invitations))
    return state.ts


def _bfs_tree(g, ts, i, rng):
    """Breadth-first tree from the root with random child order; join_round = level."""
    t = ts.trees[i]
    frontier = [t.root]
    depth = 0
    while frontier:
        depth += 1
        nxt = []
        for w in rng.permutation(frontier):
            nbrs = list(g.neighbors(int(w)))
            for v in rng.permutation(nbrs) if nbrs else ():
                v = int(v)
                if ts.members[v] and not t.contains(v):
                    _attach(ts, i, v, int(w), depth)
                    nxt.append(v)
        frontier = nxt
    ts.round = max(ts.round, depth)


def new_tree_set(n, roots, members=None):
    members = np.ones(n, dtype=bool) if members is None else np.asarray(members, dtype=bool).copy()
    return TreeSet(
        trees=[Tree(n, r) for r in roots],
        pc=[Counter() for _ in range(n)],
        members=members,
    )


def construct_trees(g, cfg, roots, members=None, rng=None):
    """
    Builds cfg.gamma spanning trees over the member nodes of g, tree i rooted at roots[i].
    Roots may repeat. DIV-RAND and DIV-DEP run the invitation protocol jointly for all
    trees; BFS builds each tree independently.
    """
    if len(roots) != cfg.gamma:
        raise DomainError(f"expected {cfg.gamma} roots, got {len(roots)}")
    for r in roots:
        if not 0 <= r < g.node_count:
            raise DomainError(f"root {r} outside [0, {g.node_count})")
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    ts = new_tree_set(g.node_count, roots, members)
    _check_connected(g, ts.members, roots)

    if cfg.strategy == "BFS":
        for i in range(cfg.gamma):
            _bfs_tree(g, ts, i, rng)
        return ts
    state = start_construction(g, cfg, ts, range(cfg.gamma), rng)
    _run_rounds(state)
    log.info("constructed %d %s trees over %d nodes in %d rounds",
             cfg.gamma, cfg.strategy, int(ts.members.sum()), state.rounds)
    return ts


def rebuild_tree(ts, g, index, cfg, root, rng):
    """
    Reconstructs tree `index` from scratch with a new root while the parent counts of the
    other trees keep steering the parent choices.
    """
    old = ts.tree(index)
    for v in np.flatnonzero(old.level >= 0):
        _detach(ts, index, int(v))
    ts.trees[index] = Tree(ts.node_count, root)
    ts.trees[index].join_round[root] = ts.round
    if cfg.strategy == "BFS":
        _bfs_tree(g, ts, index, rng)
    else:
        _run_rounds(start_construction(g, cfg, ts, [index], rng))
    ts.reparented[index] = [int(v) for v in np.flatnonzero(ts.trees[index].level >= 0)]
    return ts


# ---------------------------
# Stabilization
# ---------------------------

def handle_join(ts, g, new_node, cfg, rng):
    """
    Adds new_node to every tree as a leaf. The node replays the invitation protocol
    locally: neighbor w's invitation for tree i counts as arriving in round
    join_round_i(w) + 1, so the delayed join does not change the expected depth.
    """
    if not 0 <= new_node < ts.node_count:
        raise DomainError(f"node {new_node} outside [0, {ts.node_count})")
    if ts.members[new_node]:
        raise DomainError(f"node {new_node} is already a member")
    in_tree = [[int(w) for w in g.neighbors(new_node) if ts.members[w] and t.contains(w)]
               for t in ts.trees]
    if any(not nbrs for nbrs in in_tree):
        raise JoinError(f"node {new_node} has no neighbor inside every tree")

    ts.members[new_node] = True
    joined = set()
    last_invite = max(int(ts.trees[i].join_round[w]) + 1
                      for i, nbrs in enumerate(in_tree) for w in nbrs)
    cap = last_invite + _round_cap(g, ts.gamma, cfg.accept_prob)
    r = 0
    while len(joined) < ts.gamma:
        r += 1
        if r > cap:
            raise ConstructionError(f"join replay for node {new_node} hit the round cap")
        invitations = sorted(
            (i, w) for i, nbrs in enumerate(in_tree) if i not in joined
            for w in nbrs if ts.trees[i].join_round[w] + 1 <= r)
        pick = select_invitation(new_node, invitations, ts, g, cfg.strategy,
                                 cfg.accept_prob, rng)
        if pick is None:
            continue
        i, w = pick
        _attach(ts, i, new_node, w, r)
        ts.reparented.setdefault(i, []).append(new_node)
        joined.add(i)
    log.debug("node %d joined %d trees after %d replayed rounds", new_node, ts.gamma, r)
    return ts


def _repair_tree(ts, g, i, node, cfg, rng):
    """Re-attaches the orphaned subtrees of `node` in tree i; returns the orphan count."""
    t = ts.trees[i]
    orphans = t.subtree(node)[1:]
    orphaned = set(orphans)
    pending = list(t.children[node])
    for c in pending:
        _detach(ts, i, c)
    _detach(ts, i, node)
    t.level[node] = -1
    t.join_round[node] = -1
    for v in orphans:
        t.level[v] = -1

    def attached(w):
        return ts.members[w] and t.level[w] >= 0

    repaired = []
    while pending:
        ts.round += 1
        progress = False
        for p in sorted(pending):
            offers = sorted((i, int(w)) for w in g.neighbors(p) if attached(w))
            if not offers:
                continue
            # a dropped node must find a new parent; waiting only delays the choice
            pick = select_invitation(p, offers, ts, g, cfg.strategy, cfg.accept_prob, rng)
            if pick is None:
                progress = True
                continue
            _attach(ts, i, p, pick[1], ts.round)
            for v in t.subtree(p)[1:]:
                t.level[v] = t.level[t.parent[v]] + 1
            pending.remove(p)
            repaired.append(p)
            progress = True
        if progress:
            continue

        # no pending node sees the tree: break the orphaned subtrees further apart
        split = [c for p in pending for c in t.children[p]]
        if not split:
            for p in pending:
                lost = t.subtree(p)
                for v in reversed(lost[1:]):
                    _detach(ts, i, v)
                for v in lost:
                    t.join_round[v] = -1
            log.debug("tree %d: %d nodes lost their path to the root", i, len(pending))
            break
        for c in split:
            _detach(ts, i, c)
        pending.extend(split)

    ts.reparented.setdefault(i, []).extend(repaired)
    return len(orphaned)


def handle_departure(ts, g, node, cfg, rng):
    """
    Removes node from all trees. Its children, and any descendant whose path to the
    root stays broken, choose new parents with the invitation protocol's selection rule
    among neighbors still attached to the root.

    Returns (ts, reassigned_count): reassigned_count is the number of nodes whose
    coordinate changes, summed over the trees.
    """
    rooted = [i for i, t in enumerate(ts.trees) if t.root == node]
    if rooted:
        raise RootDepartureError(node, rooted)
    if not ts.members[node]:
        raise DomainError(f"node {node} is not a live member")

    ts.members[node] = False
    reassigned = 0
    for i, t in enumerate(ts.trees):
        if t.contains(node):
            reassigned += _repair_tree(ts, g, i, node, cfg, rng)
    ts.pc[node].clear()
    return ts, reassigned


def descendants_count(ts, node, tree):
    t = ts.tree(tree)
    if not t.contains(node):
        raise DomainError(f"node {node} is not in tree {tree}")
    return len(t.subtree(node)) - 1
