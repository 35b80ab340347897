# experiments.py
# Scenario runs, per-run metrics, confidence intervals and the CSV output.

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

import config
from addresses import (
    AddressKeys, SubtreeCipher, add_ppp_layer, distribute_subtree_keys, issue_address,
    make_mac_keys,
)
from adversary import (
    AdversaryConfig, LiveMask, apply_att_rand, apply_att_root, attach_attacker,
    attacker_edge_steps, inject_failures,
)
from embedding import EmbeddingConfig, assign_coordinates, random_bits, reassign_subtrees
from errors import ConfigError, ValidationError
from graph import components, cut_vertices, mean_shortest_path, parse_graph_source
from overlay import DhtConfig, build_overlay, dht_lookup, overlay_stabilize
from routing import RoutingConfig, RoutingContext, Target, route_multi, sample_pair
from trees import TreeConfig, construct_trees, elect_root, handle_departure, handle_join

log = logging.getLogger(__name__)

METRICS = ("routing_length", "success_ratio", "stabilization_cost", "dht_underlay_hops",
           "shortest_path", "churn_reassigned", "dht_churn_success")


@dataclass(frozen=True)
class Scenario:
    label: str = "default"
    graph: str = config.SYNTHETIC_GRAPH
    trees: TreeConfig = field(default_factory=TreeConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    dht: DhtConfig = None
    pairs_per_run: int = config.PAIRS_PER_RUN
    runs: int = config.RUNS
    master_seed: int = config.MASTER_SEED
    root_policy: str = config.ROOT_POLICY
    stabilization_samples: int = config.STABILIZATION_SAMPLES
    shortest_paths: bool = False
    churn: int = 0                  # nodes that leave and rejoin before routing

    def validate(self):
        if self.runs < 1:
            raise ValidationError(f"runs must be >= 1, got {self.runs}")
        if self.pairs_per_run < 1:
            raise ValidationError(f"pairs_per_run must be >= 1, got {self.pairs_per_run}")
        if self.stabilization_samples < 0:
            raise ValidationError("stabilization_samples must be >= 0")
        if self.churn < 0:
            raise ValidationError("churn must be >= 0")
        self.routing.tau_for(self.trees.gamma)
        if self.routing.embedding != self.embedding:
            raise ValidationError("routing and embedding disagree on the address parameters")
        if self.adversary.mode == "att-root" and self.stabilization_samples:
            log.warning("%s: roots are the attacker, stabilization cost is skipped", self.label)
        if self.churn and self.dht is not None and self.routing.addressing == "ppp-address":
            log.warning("%s: encrypted addresses are not re-keyed, overlay churn is skipped", self.label)
        return self


@dataclass(frozen=True)
class MetricRow:
    scenario: str
    metric: str
    mean: float
    ci95: float
    runs: int


def pie_routing(cfg=EmbeddingConfig()):
    """The PIE baseline: one tree, tree distance, no backtracking."""
    return RoutingConfig(tau=1, metric="TD", backtracking=False, embedding=cfg)


def resolve_graph_source(spec):
    """'facebook' resolves to the edge list named by the dataset environment variable."""
    if spec != "facebook":
        return spec
    path = os.environ.get(config.FACEBOOK_ENV)
    if not path:
        raise ConfigError(f"graph 'facebook' needs {config.FACEBOOK_ENV} to name the edge list")
    return path


def stabilization_metric(ts, g, samples, seed, cfg=TreeConfig()):
    """Mean number of reassigned coordinates over `samples` random non-root departures."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    roots = set(ts.roots())
    candidates = [int(v) for v in np.flatnonzero(ts.members) if v not in roots]
    if not candidates:
        return 0.0
    total = 0
    for v in rng.choice(candidates, size=samples, replace=True):
        _, reassigned = handle_departure(ts.copy(), g, int(v), cfg, rng)
        total += reassigned
    return total / samples


def _churn_candidates(ts, g, live):
    # cut vertices are skipped so a departure never strands part of a tree
    roots = set(ts.roots())
    cut = cut_vertices(g, ts.members)
    return [int(v) for v in np.flatnonzero(ts.members & live.honest())
            if v not in roots and v not in cut]


def _reembed(ts, coords, ecfg, rng, fabricate):
    return sum(len(reassign_subtrees(coords, ts, i, ecfg, rng, fabricate)) for i in range(ts.gamma))


def depart_nodes(ts, g, coords, count, tcfg, ecfg, rng, live, fabricate=None, state=None):
    """
    Up to `count` honest non-root nodes leave one after another. Trees are repaired and
    coordinates re-embedded after each departure; with an overlay state the departure
    is also announced there. Returns (departed nodes, changed coordinates).
    """
    away, changed = [], 0
    for _ in range(count):
        candidates = _churn_candidates(ts, g, live)
        if not candidates:
            log.warning("no node can leave without splitting a tree, %d of %d departed",
                        len(away), count)
            break
        v = int(rng.choice(candidates))
        handle_departure(ts, g, v, tcfg, rng)
        changed += _reembed(ts, coords, ecfg, rng, fabricate)
        live.alive[v] = False
        if state is not None:
            overlay_stabilize(state, v, coords)
        away.append(v)
    return away, changed


def apply_churn(ts, g, coords, count, tcfg, ecfg, rng, live, fabricate=None):
    """
    `count` nodes leave and then rejoin in reverse order, each rejoin replaying the
    invitation protocol. Returns the mean number of changed coordinates per node.
    """
    if count < 1:
        raise ValidationError("churn needs at least one node")
    away, changed = depart_nodes(ts, g, coords, count, tcfg, ecfg, rng, live, fabricate)
    for v in reversed(away):
        handle_join(ts, g, v, tcfg, rng)
        changed += _reembed(ts, coords, ecfg, rng, fabricate)
        live.alive[v] = True
    log.debug("churn of %d nodes changed %d coordinates", len(away), changed)
    return changed / len(away) if away else 0.0


def _targets(node, coords, ts, scenario, addr_keys, subtree_keys, cipher, rng):
    mode = scenario.routing.addressing
    ecfg = scenario.embedding
    out = []
    for i in range(ts.gamma):
        if mode == "coordinate":
            out.append(Target(node, coords[i][node]))
            continue
        addr = issue_address(node, i, coords, ts, addr_keys[node], rng, ecfg)
        if mode == "ppp-address":
            addr = add_ppp_layer(addr, subtree_keys[i][node], cipher)
        out.append(Target(node, addr))
    return out


def _roots(g, scenario, attacker, rng):
    gamma = scenario.trees.gamma
    if scenario.adversary.mode == "att-root":
        return apply_att_root(gamma, attacker)
    honest = [v for v in range(g.node_count) if v != attacker]
    return [elect_root(g, scenario.root_policy, int(rng.integers(2 ** 31)), honest)
            for _ in range(gamma)]


def run_once(g, scenario, seed_seq):
    """One run: trees, embedding, adversary, routing pairs and optional overlay lookups."""
    rng = np.random.default_rng(seed_seq)
    adv = scenario.adversary
    adv_rng = np.random.default_rng([adv.seed, int(rng.integers(2 ** 31))])
    attacker = None
    if adv.attacking:
        g, attacker = attach_attacker(g, adv.attacker_edges, int(adv_rng.integers(2 ** 31)))

    tcfg = replace(scenario.trees, rng_seed=int(rng.integers(2 ** 31)))
    ts = construct_trees(g, tcfg, _roots(g, scenario, attacker, rng), rng=rng)

    metrics = {}
    if scenario.stabilization_samples and adv.mode != "att-root":
        metrics["stabilization_cost"] = stabilization_metric(
            ts, g, scenario.stabilization_samples, int(rng.integers(2 ** 31)), tcfg)

    fabricate = None
    if adv.mode == "att-rand":
        fabricate = apply_att_rand(ts, attacker, rng, scenario.embedding.bits_per_element)
    coords = assign_coordinates(ts, scenario.embedding, rng, fabricate)

    live = LiveMask.all_alive(g.node_count, attacker)
    if adv.failure_fraction > 0:
        live = inject_failures(g, adv.failure_fraction, int(adv_rng.integers(2 ** 31)), live)
    if scenario.churn:
        metrics["churn_reassigned"] = apply_churn(
            ts, g, coords, scenario.churn, tcfg, scenario.embedding, rng, live, fabricate)

    addr_keys = subtree_keys = cipher = None
    if scenario.routing.addressing != "coordinate":
        addr_keys = [AddressKeys(k) for k in make_mac_keys(g.node_count, rng)]
    if scenario.routing.addressing == "ppp-address":
        macs = [k.mac_key for k in addr_keys]
        subtree_keys = [distribute_subtree_keys(ts, i, macs, rng) for i in range(ts.gamma)]
        cipher = SubtreeCipher(scenario.embedding.bits_per_element)

    ctx = RoutingContext(g, coords, live, subtree_keys, cipher)
    labels = components(g, live.honest())
    successes, lengths, pairs = 0, [], []
    for _ in range(scenario.pairs_per_run):
        s, e = sample_pair(live, labels, rng)
        pairs.append((s, e))
        targets = _targets(e, coords, ts, scenario, addr_keys, subtree_keys, cipher, rng)
        outcome = route_multi(ctx, s, targets, scenario.routing, rng)
        if outcome.success:
            successes += 1
            lengths.append(outcome.best_hops)
    metrics["success_ratio"] = successes / scenario.pairs_per_run
    metrics["routing_length"] = float(np.mean(lengths)) if lengths else float("nan")
    if scenario.shortest_paths:
        metrics["shortest_path"] = mean_shortest_path(g, pairs)

    if scenario.dht is not None:
        state = build_overlay(g, ts, coords, scenario.dht, int(rng.integers(2 ** 31)), live,
                              subtree_keys, cipher)
        honest = np.flatnonzero(live.honest())
        hops = []
        for _ in range(scenario.pairs_per_run):
            origin = int(rng.choice(honest))
            found = dht_lookup(state, random_bits(rng, scenario.dht.id_bits), origin,
                               scenario.routing, rng)
            if found.success:
                hops.append(found.underlay_hops)
        metrics["dht_underlay_hops"] = float(np.mean(hops)) if hops else float("nan")
        if scenario.churn and scenario.routing.addressing != "ppp-address":
            depart_nodes(ts, g, coords, scenario.churn, tcfg, scenario.embedding, rng, live,
                         fabricate, state)
            honest = np.flatnonzero(live.honest())
            found = [dht_lookup(state, random_bits(rng, scenario.dht.id_bits), int(rng.choice(honest)),
                                scenario.routing, rng).success
                     for _ in range(scenario.pairs_per_run)]
            metrics["dht_churn_success"] = float(np.mean(found))
    return metrics


def _run_job(args):
    return run_once(*args)


def aggregate(label, per_run):
    """Mean and 95% t-interval half-width of each metric over the per-run means."""
    rows = []
    for metric in METRICS:
        values = np.array([r[metric] for r in per_run if metric in r], dtype=float)
        values = values[~np.isnan(values)]
        if len(values) == 0:
            continue
        ci = 0.0
        if len(values) > 1:
            ci = float(stats.t.ppf(0.975, len(values) - 1) * values.std(ddof=1) / np.sqrt(len(values)))
        rows.append(MetricRow(label, metric, float(values.mean()), ci, len(values)))
    return rows


def run_scenario(scenario, workers=config.WORKERS, g=None):
    """Runs scenario.runs independent runs (optionally in a process pool) and aggregates them."""
    scenario.validate()
    if g is None:
        g = parse_graph_source(resolve_graph_source(scenario.graph), scenario.master_seed)
    seeds = np.random.SeedSequence(scenario.master_seed).spawn(scenario.runs)
    log.info("scenario %s: n=%d, %d runs of %d pairs", scenario.label, g.node_count,
             scenario.runs, scenario.pairs_per_run)
    jobs = [(g, scenario, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(_run_job, jobs))
    else:
        per_run = []
        for k, job in enumerate(jobs, start=1):
            per_run.append(_run_job(job))
            log.info("run %d/%d: success ratio %.4f", k, scenario.runs, per_run[-1]["success_ratio"])
    return aggregate(scenario.label, per_run)


def failure_sweep(scenario, fractions, workers=config.WORKERS, g=None):
    if g is None:
        g = parse_graph_source(resolve_graph_source(scenario.graph), scenario.master_seed)
    rows = []
    for f in fractions:
        adv = replace(scenario.adversary, failure_fraction=f)
        step = replace(scenario, label=f"{scenario.label}/fail={f:.2f}", adversary=adv)
        rows.extend(run_scenario(step, workers, g))
    return rows


def attack_sweep(scenario, edge_counts=None, workers=config.WORKERS, g=None):
    if not scenario.adversary.attacking:
        raise ValidationError("attack_sweep needs an attack mode")
    if g is None:
        g = parse_graph_source(resolve_graph_source(scenario.graph), scenario.master_seed)
    edge_counts = attacker_edge_steps(g.node_count) if edge_counts is None else edge_counts
    rows = []
    for x in edge_counts:
        adv = replace(scenario.adversary, attacker_edges=x)
        step = replace(scenario, label=f"{scenario.label}/x={x}", adversary=adv)
        rows.extend(run_scenario(step, workers, g))
    return rows


def write_csv(rows, path):
    if not rows:
        raise ValidationError("no rows to write")
    df = pd.DataFrame([[r.scenario, r.metric, r.mean, r.ci95, r.runs] for r in rows],
                      columns=list(config.CSV_COLUMNS))
    df.to_csv(path, index=False, encoding="utf-8", float_format="%.12g")
    log.info("wrote %d rows to %s", len(rows), path)
    return path


def read_csv(path):
    df = pd.read_csv(path, encoding="utf-8")
    return [MetricRow(r.scenario, r.metric, float(r.mean), float(r.ci95), int(r.runs))
            for r in df.itertuples(index=False)]
