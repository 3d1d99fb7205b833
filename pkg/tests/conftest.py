import numpy as np
import pytest

from models.likelihood import CountData
from spatial.graph import ArealGraph


def _random_tree_edges(nodes, rng):
    edges = []
    for pos in range(1, len(nodes)):
        edges.append((nodes[int(rng.integers(0, pos))], nodes[pos]))
    return edges


@pytest.fixture
def make_path():
    def make(n):
        return ArealGraph(n, tuple((i, i + 1) for i in range(1, n)))
    return make


@pytest.fixture
def make_cycle():
    def make(n):
        return ArealGraph(n, tuple((i, i % n + 1) for i in range(1, n + 1)))
    return make


@pytest.fixture
def make_star():
    def make(n):
        return ArealGraph(n, tuple((1, j) for j in range(2, n + 1)))
    return make


@pytest.fixture
def make_grid():
    def make(rows, cols):
        edges = []
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c + 1
                if c < cols - 1:
                    edges.append((i, i + 1))
                if r < rows - 1:
                    edges.append((i, i + cols))
        return ArealGraph(rows * cols, tuple(edges))
    return make


@pytest.fixture
def make_random_graph():
    """Random graph on n regions, `components` connected pieces, no isolated region."""
    def make(n, seed=0, components=1, extra=0.3):
        rng = np.random.default_rng(seed)
        sizes = np.full(components, n // components)
        sizes[: n % components] += 1
        if np.any(sizes < 2):
            raise ValueError("every component needs at least two regions")
        edges = []
        start = 1
        for size in sizes:
            nodes = list(range(start, start + size))
            edges += _random_tree_edges(nodes, rng)
            for a in nodes:
                for b in nodes:
                    if a < b and rng.uniform() < extra:
                        edges.append((a, b))
            start += size
        return ArealGraph(n, tuple(edges))
    return make


@pytest.fixture
def dense_car():
    """Dense D - alpha W for a graph."""
    def make(g, alpha=1.0):
        W = np.zeros((g.n_regions, g.n_regions))
        for i, j in g.edges:
            W[i - 1, j - 1] = W[j - 1, i - 1] = 1.0
        return np.diag(W.sum(axis=1)) - alpha * W
    return make


@pytest.fixture
def make_counts():
    """Poisson counts around a constant expected count."""
    def make(I, K, seed=0, expected=20.0, covariate=False):
        rng = np.random.default_rng(seed)
        E = np.full((I, K), float(expected))
        z = rng.normal(size=(I, K))
        eta = np.log(E) + 0.3 * rng.normal(size=(I, K)) + (0.4 * z if covariate else 0.0)
        observed = rng.poisson(np.exp(eta)).astype(float)
        covariates = {"x": z} if covariate else {}
        return CountData(observed=observed, expected=E, covariates=covariates)
    return make
