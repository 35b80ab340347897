# graph.py
# Undirected social graph: loading, synthetic generation and basic queries.

import logging
from dataclasses import dataclass
from functools import cached_property

import networkx as nx
import numpy as np
import pandas as pd

from errors import DomainError, GenerationError, GraphParseError, InvalidInputError

log = logging.getLogger(__name__)

UNREACHABLE = -1
GENERATION_RETRIES = 10


@dataclass(frozen=True)
class Graph:
    """
    Immutable undirected graph over node ids 0..n-1.
    adjacency[u] is the sorted tuple of u's neighbors; symmetric, no self-loops.
    """
    adjacency: tuple

    @property
    def node_count(self):
        return len(self.adjacency)

    def neighbors(self, u):
        return self.adjacency[u]

    def degree(self, u):
        return len(self.adjacency[u])

    def has_edge(self, u, v):
        return v in self.neighbor_sets[u]

    @cached_property
    def neighbor_sets(self):
        return tuple(frozenset(nbrs) for nbrs in self.adjacency)

    @cached_property
    def edge_count(self):
        return sum(len(nbrs) for nbrs in self.adjacency) // 2

    def edges(self):
        for u, nbrs in enumerate(self.adjacency):
            for v in nbrs:
                if u < v:
                    yield u, v

    @cached_property
    def nx_graph(self):
        G = nx.Graph()
        G.add_nodes_from(range(self.node_count))
        G.add_edges_from(self.edges())
        return G


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    giant_component_size: int
    diameter_estimate: int
    average_degree: float


def from_edges(edges, node_count=None):
    """
    Builds a Graph from (u, v) pairs. Ids are remapped to 0..n-1 in sorted order
    unless node_count is given, in which case ids must already be dense.
    Duplicates and self-loops are dropped; direction is ignored.
    """
    edges = [(int(u), int(v)) for u, v in edges if u != v]
    if node_count is None:
        ids = sorted({x for e in edges for x in e})
        index = {node: i for i, node in enumerate(ids)}
        edges = [(index[u], index[v]) for u, v in edges]
        node_count = len(ids)
    adjacency = [set() for _ in range(node_count)]
    for u, v in edges:
        adjacency[u].add(v)
        adjacency[v].add(u)
    return Graph(tuple(tuple(sorted(nbrs)) for nbrs in adjacency))


def load_edge_list(path):
    """
    Reads an edge list with one "u v" pair per line; '#' lines are comments.
    Returns a symmetric, deduplicated Graph with ids remapped to 0..n-1.
    """
    edges = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise GraphParseError(path, line_no, line)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphParseError(path, line_no, line) from None
            edges.append((u, v))

    g = from_edges(edges)
    if g.node_count == 0:
        raise InvalidInputError(f"{path}: edge list holds no edges")
    log.info("loaded %s: n=%d m=%d", path, g.node_count, g.edge_count)
    return g


def generate_synthetic(model, n, param, seed):
    """
    model: "erdos-renyi" (param = edge probability) or
           "preferential-attachment" (param = edges per new node).
    Deterministic per seed. Retries with derived seeds until connected, then falls
    back to the giant component if it still covers at least half of the nodes.
    """
    if n < 2:
        raise InvalidInputError("synthetic graphs need n >= 2")
    if model == "erdos-renyi":
        if not 0 < param <= 1:
            raise InvalidInputError(f"edge probability must be in (0, 1], got {param}")
        build = lambda s: nx.gnp_random_graph(n, param, seed=s)
    elif model == "preferential-attachment":
        m = int(param)
        if m < 1 or m >= n:
            raise InvalidInputError(f"attachment degree must be in [1, n), got {param}")
        build = lambda s: nx.barabasi_albert_graph(n, m, seed=s)
    else:
        raise InvalidInputError(f"unknown synthetic model {model!r}")

    candidate = None
    for attempt in range(GENERATION_RETRIES):
        G = build(seed + attempt * 7919)
        if nx.is_connected(G):
            return from_edges(G.edges(), node_count=n)
        log.debug("synthetic %s n=%d attempt %d disconnected", model, n, attempt)
        candidate = G

    giant = max(nx.connected_components(candidate), key=len)
    if len(giant) * 2 < n or len(giant) < 2:
        raise GenerationError(
            f"{model}(n={n}, param={param}) stayed disconnected after {GENERATION_RETRIES} tries")
    log.warning("synthetic %s n=%d: using giant component of %d nodes", model, n, len(giant))
    return from_edges(candidate.subgraph(giant).edges())


def parse_graph_source(spec, seed):
    """
    "pa:<n>:<m>" or "er:<n>:<p>" generates a synthetic graph, anything else is an
    edge-list path whose giant component is used.
    """
    kind, _, rest = spec.partition(":")
    models = {"pa": "preferential-attachment", "er": "erdos-renyi"}
    if kind in models and rest:
        try:
            n_text, param_text = rest.split(":")
            n, param = int(n_text), float(param_text)
        except ValueError:
            raise InvalidInputError(f"bad synthetic graph spec {spec!r}") from None
        return generate_synthetic(models[kind], n, param, seed)
    return giant_component(load_edge_list(spec))


def giant_component(g):
    """Induced subgraph of the largest connected component, ids remapped."""
    if g.node_count == 0:
        return g
    giant = max(nx.connected_components(g.nx_graph), key=len)
    if len(giant) == g.node_count:
        return g
    keep = sorted(giant)
    index = {node: i for i, node in enumerate(keep)}
    adjacency = tuple(tuple(index[v] for v in g.adjacency[u]) for u in keep)
    return Graph(adjacency)


def components(g, alive=None):
    """Component label per node (UNREACHABLE for dead nodes), restricted to alive nodes."""
    label = np.full(g.node_count, UNREACHABLE, dtype=np.int64)
    nodes = range(g.node_count) if alive is None else np.flatnonzero(alive)
    view = g.nx_graph if alive is None else g.nx_graph.subgraph(nodes)
    for c, comp in enumerate(nx.connected_components(view)):
        label[list(comp)] = c
    return label


def cut_vertices(g, members=None):
    """Nodes whose removal disconnects the subgraph induced by `members` (all nodes if None)."""
    view = g.nx_graph if members is None else g.nx_graph.subgraph(np.flatnonzero(members).tolist())
    return {int(v) for v in nx.articulation_points(view)}


def shortest_path_lengths(g, source):
    """Hop distances from source; unreachable nodes hold UNREACHABLE."""
    if not 0 <= source < g.node_count:
        raise DomainError(f"source {source} outside [0, {g.node_count})")
    dist = np.full(g.node_count, UNREACHABLE, dtype=np.int64)
    for node, d in nx.single_source_shortest_path_length(g.nx_graph, source).items():
        dist[node] = d
    return dist


def diameter_estimate(g):
    """Double-sweep lower bound on the diameter of g's giant component."""
    if g.node_count < 2:
        return 0
    start = max(range(g.node_count), key=g.degree)
    first = shortest_path_lengths(g, start)
    far = int(np.argmax(first))
    return max(int(shortest_path_lengths(g, far).max()), 1)


def graph_stats(g):
    giant = giant_component(g)
    return GraphStats(
        node_count=g.node_count,
        edge_count=g.edge_count,
        giant_component_size=giant.node_count,
        diameter_estimate=diameter_estimate(giant),
        average_degree=2 * g.edge_count / g.node_count if g.node_count else 0.0,
    )


def mean_shortest_path(g, pairs):
    """Mean hop distance over (s, e) pairs; the optimum the routing lengths compare against."""
    by_source = {}
    for s, e in pairs:
        by_source.setdefault(s, []).append(e)
    total = 0
    for s, targets in by_source.items():
        dist = shortest_path_lengths(g, s)
        total += int(dist[targets].sum())
    return total / len(pairs)


def stats_row(g):
    st = graph_stats(g)
    return {
        "n": st.node_count,
        "m": st.edge_count,
        "giant": st.giant_component_size,
        "diameter": st.diameter_estimate,
        "mean_degree": st.average_degree,
    }


def write_stats_csv(g, path):
    pd.DataFrame([stats_row(g)]).to_csv(path, index=False)
