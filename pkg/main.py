# main.py
# Command-line entry point: builds a scenario from flags and an optional config file,
# runs it and writes the metric CSV.

import argparse
import logging
import sys

import config
from adversary import AdversaryConfig
from embedding import EmbeddingConfig
from errors import ConfigError, SimulationError
from experiments import (
    Scenario, attack_sweep, failure_sweep, pie_routing, resolve_graph_source, run_scenario,
    write_csv,
)
from graph import parse_graph_source, write_stats_csv
from overlay import DhtConfig
from routing import RoutingConfig
from trees import TreeConfig

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _optional_int(text):
    return None if str(text).lower() in ("", "none", "all") else int(text)


def _floats(text):
    return [float(part) for part in str(text).split(",")]


def _edges(text):
    """'auto' for the doubling steps, one count, or a comma list."""
    if str(text) == "auto":
        return "auto"
    return [int(part) for part in str(text).split(",")]


# flag -> (converter, default)
OPTIONS = {
    "graph": (str, config.SYNTHETIC_GRAPH),
    "gamma": (int, config.GAMMA),
    "q": (float, config.ACCEPT_PROB),
    "strategy": (str, config.STRATEGY),
    "root-policy": (str, config.ROOT_POLICY),
    "metric": (str, config.METRIC),
    "tau": (_optional_int, config.TAU),
    "addressing": (str, config.ADDRESSING),
    "embedding-choice": (str, config.EMBEDDING_CHOICE),
    "no-backtracking": (_bool, False),
    "mode": (str, "none"),
    "attacker-edges": (_edges, [0]),
    "failure-fraction": (_floats, [0.0]),
    "pairs": (int, config.PAIRS_PER_RUN),
    "runs": (int, config.RUNS),
    "seed": (int, config.MASTER_SEED),
    "stabilization-samples": (int, config.STABILIZATION_SAMPLES),
    "churn": (int, 0),
    "dht": (_bool, False),
    "alpha": (int, config.ALPHA),
    "bucket-size": (int, config.BUCKET_SIZE),
    "workers": (int, config.WORKERS),
    "label": (str, None),
    "out": (str, "results.csv"),
    "log-level": (str, config.LOG_LEVEL),
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="f2f-embed-sim",
        description="Routing, anonymity and robustness simulation of tree embeddings "
                    "in friend-to-friend overlays.")
    p.add_argument("--config", help="flat YAML mapping of flag names; explicit flags override it")
    p.add_argument("--graph", help="edge-list path, 'facebook', or pa:<n>:<m> / er:<n>:<p>")
    p.add_argument("--gamma", help="number of parallel trees")
    p.add_argument("--q", "--accept-prob", dest="q", help="acceptance probability")
    p.add_argument("--strategy", help="DIV-RAND, DIV-DEP or BFS")
    p.add_argument("--root-policy", help="random, max-degree or fixed:<id>")
    p.add_argument("--metric", help="TD or CPL")
    p.add_argument("--tau", help="trees to route in (default: all)")
    p.add_argument("--addressing", help="coordinate, rp-address or ppp-address")
    p.add_argument("--embedding-choice", help="random-tau or min-neighbor-distance")
    p.add_argument("--no-backtracking", action="store_const", const="true",
                   help="plain greedy routing")
    p.add_argument("--mode", help="none, random-failures, att-rand or att-root")
    p.add_argument("--attacker-edges", help="count, comma list or 'auto' for a sweep")
    p.add_argument("--failure-fraction", help="fraction or comma list for a sweep")
    p.add_argument("--pairs", help="source-destination pairs (and lookups) per run")
    p.add_argument("--runs")
    p.add_argument("--seed", help="master seed")
    p.add_argument("--stabilization-samples", help="departures sampled per run (0 disables)")
    p.add_argument("--churn", help="nodes that leave and rejoin before routing (also churns the overlay)")
    p.add_argument("--dht", action="store_const", const="true", help="also measure overlay lookups")
    p.add_argument("--alpha")
    p.add_argument("--bucket-size")
    p.add_argument("--workers", help="parallel run processes")
    p.add_argument("--label", help="scenario label in the CSV")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--graph-stats", help="also write a one-row graph statistics CSV here")
    p.add_argument("--log-level")
    return p


def resolve_options(args):
    """Defaults, overridden by the config file, overridden by explicit flags."""
    from_file = config.load_config_file(args.config) if args.config else {}
    if "accept-prob" in from_file:
        from_file.setdefault("q", from_file.pop("accept-prob"))
    opts = {}
    for key, (convert, default) in OPTIONS.items():
        raw = getattr(args, key.replace("-", "_"), None)
        if raw is None:
            raw = from_file.get(key)
        try:
            opts[key] = default if raw is None else convert(raw)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return opts


def build_scenario(opts):
    ecfg = EmbeddingConfig()
    if opts["no-backtracking"] and opts["gamma"] == 1 and opts["metric"] == "TD":
        routing = pie_routing(ecfg)
    else:
        routing = RoutingConfig(
            tau=opts["tau"], metric=opts["metric"], addressing=opts["addressing"],
            backtracking=not opts["no-backtracking"],
            embedding_choice=opts["embedding-choice"], embedding=ecfg)
    edges = opts["attacker-edges"]
    adversary = AdversaryConfig(
        mode=opts["mode"],
        failure_fraction=opts["failure-fraction"][0],
        attacker_edges=edges[0] if edges != "auto" else 1,
        seed=opts["seed"])
    dht = DhtConfig(bucket_size=opts["bucket-size"], alpha=opts["alpha"]) if opts["dht"] else None
    label = opts["label"] or (
        "pie" if not routing.backtracking and routing.tau == 1 and opts["gamma"] == 1
        else f"{opts['strategy']}/g={opts['gamma']}/{opts['metric']}")
    return Scenario(
        label=label,
        graph=opts["graph"],
        trees=TreeConfig(gamma=opts["gamma"], accept_prob=opts["q"],
                         strategy=opts["strategy"], rng_seed=opts["seed"]),
        embedding=ecfg,
        routing=routing,
        adversary=adversary,
        dht=dht,
        pairs_per_run=opts["pairs"],
        runs=opts["runs"],
        master_seed=opts["seed"],
        root_policy=opts["root-policy"],
        stabilization_samples=opts["stabilization-samples"],
        churn=opts["churn"],
    )


def execute(opts, graph_stats=None):
    scenario = build_scenario(opts).validate()
    g = parse_graph_source(resolve_graph_source(scenario.graph), scenario.master_seed)
    if graph_stats:
        write_stats_csv(g, graph_stats)

    fractions, edges = opts["failure-fraction"], opts["attacker-edges"]
    if len(fractions) > 1:
        rows = failure_sweep(scenario, fractions, opts["workers"], g)
    elif edges == "auto" or len(edges) > 1:
        rows = attack_sweep(scenario, None if edges == "auto" else edges, opts["workers"], g)
    else:
        rows = run_scenario(scenario, opts["workers"], g)
    write_csv(rows, opts["out"])
    return rows


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        logging.basicConfig(level=opts["log-level"].upper(), format=LOG_FORMAT, stream=sys.stderr)
        execute(opts, args.graph_stats)
    except (SimulationError, OSError) as e:
        logging.basicConfig(format=LOG_FORMAT, stream=sys.stderr)
        log.error("%s", e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
