import numpy as np
import pytest

from netadapt.graph import SourceVector, build_network


def random_connected_network(rng, n, extra_edges=4, c_range=(0.5, 2.0),
                             l_range=(0.5, 2.0)):
    """Random spanning tree plus a few extra edges, all positive C."""
    vertices = [(i, float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))
                for i in range(n)]
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        a = int(order[k])
        b = int(order[rng.integers(0, k)])
        edges.add((min(a, b), max(a, b)))
    attempts = 0
    while len(edges) < n - 1 + extra_edges and attempts < 100:
        a, b = rng.integers(0, n, size=2)
        attempts += 1
        if a == b:
            continue
        edges.add((min(int(a), int(b)), max(int(a), int(b))))
    rows = [(i, j,
             float(rng.uniform(*l_range)),
             float(rng.uniform(*c_range))) for (i, j) in sorted(edges)]
    return build_network(vertices, rows)


def random_sources(rng, n, scale=1.0):
    s = rng.normal(0.0, scale, size=n)
    return SourceVector(s, balance=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
