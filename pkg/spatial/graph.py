# spatial/graph.py
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as csgraph_components

from errors import ValidationError
from linalg.sparse import SparseSym


@dataclass(frozen=True)
class ArealGraph:
    """Lattice adjacency: regions 1..I and unordered neighbor pairs (i < j)."""
    n_regions: int
    edges: tuple
    region_labels: tuple = None

    def __post_init__(self):
        if int(self.n_regions) != self.n_regions or self.n_regions < 1:
            raise ValidationError(f"number of regions must be a positive integer, got {self.n_regions}")
        pairs = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValidationError(f"self-loop on region {i}")
            for node in (i, j):
                if not 1 <= node <= self.n_regions:
                    raise ValidationError(f"region id {node} outside [1, {self.n_regions}]")
            pairs.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(pairs)))
        if self.region_labels is not None:
            labels = tuple(str(label) for label in self.region_labels)
            if len(labels) != self.n_regions:
                raise ValidationError("need exactly one label per region")
            if len(set(labels)) != len(labels):
                raise ValidationError("region labels must be unique")
            object.__setattr__(self, "region_labels", labels)

    @property
    def n_edges(self):
        return len(self.edges)

    def labels(self):
        if self.region_labels is not None:
            return self.region_labels
        return tuple(str(i) for i in range(1, self.n_regions + 1))

    def _edge_index(self):
        if not self.edges:
            empty = np.zeros(0, dtype=np.intp)
            return empty, empty
        arr = np.asarray(self.edges, dtype=np.intp) - 1
        return arr[:, 0], arr[:, 1]

    def _adjacency_csr(self):
        rows, cols = self._edge_index()
        n = self.n_regions
        ones = np.ones(rows.size)
        upper = sp.csr_matrix((ones, (rows, cols)), shape=(n, n))
        return (upper + upper.T).tocsr()


def neighbor_counts(g):
    rows, cols = g._edge_index()
    counts = np.bincount(rows, minlength=g.n_regions) + np.bincount(cols, minlength=g.n_regions)
    return counts.astype(np.int64)


def adjacency_matrix(g):
    """Binary, symmetric W with zero diagonal."""
    rows, cols = g._edge_index()
    n = g.n_regions
    # lower triangle holds (max, min) for each unordered pair
    lower = sp.csc_matrix((np.ones(rows.size), (cols, rows)), shape=(n, n))
    return SparseSym.from_lower(lower)


def connected_components(g):
    """Component labels in 1..C (first-seen order) and the count C."""
    count, labels = csgraph_components(g._adjacency_csr(), directed=False)
    return labels.astype(np.int64) + 1, int(count)


def isolated_regions(g):
    """1-based ids of regions without neighbors."""
    return np.flatnonzero(neighbor_counts(g) == 0) + 1


def require_neighbors(g):
    isolated = isolated_regions(g)
    if isolated.size:
        shown = ", ".join(str(i) for i in isolated[:10])
        raise ValidationError(f"regions without neighbors are not supported: {shown}")
