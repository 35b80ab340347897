# conftest.py
# Small graphs shared by the test modules.

import os

import numpy as np
import pytest

import config
from graph import from_edges, generate_synthetic


def path_edges(n):
    return [(i, i + 1) for i in range(n - 1)]


@pytest.fixture
def path_graph():
    return lambda n: from_edges(path_edges(n), node_count=n)


@pytest.fixture
def star_graph():
    """Node 0 is the hub."""
    return lambda leaves: from_edges([(0, i) for i in range(1, leaves + 1)], node_count=leaves + 1)


@pytest.fixture
def cycle_graph():
    return lambda n: from_edges(path_edges(n) + [(n - 1, 0)], node_count=n)


@pytest.fixture
def random_tree():
    """Uniform random recursive tree: node i attaches to a random earlier node."""
    def build(n, seed):
        rng = np.random.default_rng(seed)
        return from_edges([(i, int(rng.integers(i))) for i in range(1, n)], node_count=n)
    return build


@pytest.fixture
def pa_graph():
    return lambda n, m=2, seed=1: generate_synthetic("preferential-attachment", n, m, seed)


@pytest.fixture
def facebook_path():
    path = os.environ.get(config.FACEBOOK_ENV)
    if not path or not os.path.exists(path):
        pytest.skip(f"{config.FACEBOOK_ENV} does not name an edge list")
    return path
