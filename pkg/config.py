# config.py

import yaml

from errors import ConfigError

# 👉 Tree construction
GAMMA = 1                    # number of parallel trees
ACCEPT_PROB = 0.5            # q in the invitation protocol
STRATEGY = "DIV-RAND"        # DIV-RAND, DIV-DEP or BFS
ROOT_POLICY = "max-degree"   # random, max-degree or fixed:<id>
ROUND_CAP_FACTOR = 50        # round cap = factor * gamma / q * diameter

# Embedding / return addresses
BITS_PER_ELEMENT = 128       # b
ADDRESS_LENGTH = 128         # L, padding target and CPL constant

# Routing
METRIC = "TD"                # TD or CPL
TAU = None                   # None means route in all gamma trees
ADDRESSING = "coordinate"    # coordinate, rp-address or ppp-address
EMBEDDING_CHOICE = "random-tau"
HOP_CAP_FACTOR = 4           # max hops = factor * n

# Kademlia overlay
BUCKET_SIZE = 8
ALPHA = 1
REPLICATION = 1
KAD_ID_BITS = 160

# Experiment defaults (desk scale)
SYNTHETIC_GRAPH = "pa:5000:4"
RUNS = 20
PAIRS_PER_RUN = 10_000
MASTER_SEED = 1
STABILIZATION_SAMPLES = 200
WORKERS = 1
LOG_LEVEL = "INFO"

CSV_COLUMNS = ("scenario", "metric", "mean", "ci95", "runs")

# Environment variable naming the Facebook WOSN edge list for the full-scale profile
FACEBOOK_ENV = "F2F_FACEBOOK_EDGES"

CONFIG_KEYS = {
    "graph", "gamma", "q", "accept-prob", "strategy", "metric", "tau", "mode",
    "attacker-edges", "failure-fraction", "pairs", "runs", "seed", "out",
    "addressing", "root-policy", "alpha", "bucket-size", "dht", "workers",
    "log-level", "label", "stabilization-samples", "no-backtracking", "churn",
    "embedding-choice",
}


def _raw(value):
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


def load_config_file(path):
    """
    Reads a flat YAML mapping and returns {key: raw string}.
    Keys use the long CLI flag names; underscores and dashes are interchangeable.
    Lists become comma-separated strings, the same form the sweep flags take.
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line_no = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{path}:{line_no}: {getattr(e, 'problem', None) or e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:{root.start_mark.line + 1}: expected a 'key: value' mapping")
    values = {}
    for key_node, _ in root.value:
        key = str(key_node.value).replace("_", "-").lower()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{key_node.start_mark.line + 1}: unknown key {key!r}")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: {key!r} must be a plain value, not a section")
        values[str(key).replace("_", "-").lower()] = _raw(value)
    return values
