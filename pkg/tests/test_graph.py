import numpy as np
import pytest

from errors import ValidationError
from spatial.graph import (
    ArealGraph,
    adjacency_matrix,
    connected_components,
    isolated_regions,
    neighbor_counts,
    require_neighbors,
)


def _reachability(g):
    n = g.n_regions
    R = np.eye(n, dtype=bool)
    for i, j in g.edges:
        R[i - 1, j - 1] = R[j - 1, i - 1] = True
    for k in range(n):
        R = R | (R[:, [k]] & R[[k], :])
    return R


def test_edges_are_normalized_and_deduplicated():
    g = ArealGraph(3, ((2, 1), (1, 2), (3, 2)))
    assert g.edges == ((1, 2), (2, 3))
    assert g.n_edges == 2


def test_self_loop_and_out_of_range_ids_are_rejected():
    with pytest.raises(ValidationError):
        ArealGraph(3, ((1, 1),))
    with pytest.raises(ValidationError):
        ArealGraph(3, ((1, 4),))
    with pytest.raises(ValidationError):
        ArealGraph(0, ())


def test_neighbor_counts_of_a_star(make_star):
    g = make_star(5)
    np.testing.assert_array_equal(neighbor_counts(g), [4, 1, 1, 1, 1])


def test_adjacency_is_symmetric_binary_with_zero_diagonal(make_random_graph):
    g = make_random_graph(7, seed=3)
    W = adjacency_matrix(g).toarray()
    np.testing.assert_array_equal(W, W.T)
    assert set(np.unique(W)) <= {0.0, 1.0}
    assert np.all(np.diag(W) == 0)
    np.testing.assert_array_equal(W.sum(axis=1), neighbor_counts(g))


def test_components_match_reachability(make_random_graph):
    g = make_random_graph(10, seed=11, components=3, extra=0.2)
    labels, count = connected_components(g)
    assert count == 3
    assert labels.min() == 1 and labels.max() == 3
    same = labels[:, None] == labels[None, :]
    np.testing.assert_array_equal(same, _reachability(g))


def test_isolated_regions_are_reported():
    g = ArealGraph(4, ((1, 2),))
    np.testing.assert_array_equal(isolated_regions(g), [3, 4])
    with pytest.raises(ValidationError, match="3, 4"):
        require_neighbors(g)


def test_default_labels():
    g = ArealGraph(3, ((1, 2), (2, 3)))
    assert g.labels() == ("1", "2", "3")
    with pytest.raises(ValidationError):
        ArealGraph(3, ((1, 2),), region_labels=("a", "a", "b"))
