import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadtest.core import SpatialLocations
from quadtest.errors import CyclicTree, DuplicatePoints, IsolatedNode, KTooLarge, NoConvergence
from quadtest.graph import (
    Graph,
    grid_adjacency,
    knn_graph,
    laplacian,
    normalize,
    radius_graph,
    tree_sibling_graph,
)


def line(*xs):
    return SpatialLocations(np.array(xs, dtype=float)[:, None])


def brute_knn(pts, k):
    """Directed kNN by full sort on (distance, index)."""
    n = len(pts)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    out = []
    for i in range(n):
        cand = sorted((d[i, j], j) for j in range(n) if j != i)
        out.append([j for _, j in cand[:k]])
    return out


def test_knn_examples():
    locs = line(0.0, 1.0, 2.5)
    assert knn_graph(locs, 1, "average").edges == [(0, 1, 1.0), (1, 2, 0.5)]
    assert knn_graph(locs, 1, "mutual").edges == [(0, 1, 1.0)]
    with pytest.raises(KTooLarge):
        knn_graph(locs, 3)


def test_knn_duplicates():
    with pytest.raises(DuplicatePoints):
        knn_graph(line(0.0, 1.0, 1.0), 1)


def test_knn_ties_lower_index():
    # point 1 is equidistant from 0 and 2; the lower index wins
    g = knn_graph(line(0.0, 1.0, 2.0), 1, "average")
    assert (0, 1, 1.0) in g.edges
    assert (1, 2, 0.5) in g.edges


@given(st.integers(5, 40), st.integers(1, 4), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_knn_matches_brute_force(n, k, seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 6, size=(n, 2)).astype(float) + rng.integers(0, 3, size=(n, 1)) * 0.5
    _, first = np.unique(pts, axis=0, return_index=True)
    pts = pts[np.sort(first)]
    if len(pts) <= k:
        return
    g = knn_graph(SpatialLocations(pts), k, "average")
    nbr = brute_knn(pts, k)
    a = np.zeros((len(pts), len(pts)))
    for i, js in enumerate(nbr):
        a[i, js] = 1
    expect = (a + a.T) / 2
    np.testing.assert_array_equal(g.adjacency().toarray(), expect)


def test_radius_graph():
    two = line(0.0, 1.0)
    assert radius_graph(two, 0.5).n_edges == 0
    assert radius_graph(two, 2.0).edges == [(0, 1, 1.0)]
    assert radius_graph(two, 1.0).n_edges == 0  # strict inequality
    chain = line(0.0, 1.0, 2.0, 3.0)
    assert radius_graph(chain, 1.5).edges == [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]


def test_grid_adjacency_counts():
    assert grid_adjacency(2, 2).n_edges == 4
    assert grid_adjacency(1, 4, boundary="torus").n_edges == 4
    assert grid_adjacency(3, 3).n_edges == 12
    g = grid_adjacency(4, 5, boundary="torus")
    assert np.all(g.degrees() == 4)


def test_tree_sibling_pairs():
    g = tree_sibling_graph([2, 2, -1], [0, 1], double_normalize=False)
    assert g.edges == [(0, 1, 1.0)]
    # ((a,b),(c,d)) under one grandparent; nodes a..d = 0..3, parents 4,5, root 6
    parent = [4, 4, 5, 5, 6, 6, -1]
    g = tree_sibling_graph(parent, [0, 1, 2, 3], double_normalize=False)
    assert g.edges == [(0, 1, 1.0), (0, 2, 0.5), (0, 3, 0.5),
                       (1, 2, 0.5), (1, 3, 0.5), (2, 3, 1.0)]


def test_tree_four_levels_apart():
    # chains of length 4 joining at the root
    parent = [2, 3, 4, 5, 6, 7, 8, 8, -1]
    g = tree_sibling_graph(parent, [0, 1], double_normalize=False)
    assert g.n_edges == 0


def test_tree_cycle():
    with pytest.raises(CyclicTree):
        tree_sibling_graph([1, 0, -1], [2])


def test_tree_double_normalized():
    parent = [4, 4, 5, 5, 6, 6, -1]
    g = tree_sibling_graph(parent, [0, 1, 2, 3])
    np.testing.assert_allclose(g.degrees(), 1.0, atol=1e-8)


def test_normalize_examples():
    ring = grid_adjacency(1, 4, boundary="torus")
    np.testing.assert_allclose(normalize(ring, "symmetric").w, 0.5)
    edge = Graph.from_edges(2, [(0, 1, 1.0)])
    assert normalize(edge, "double").edges == [(0, 1, 1.0)]
    star = Graph.from_edges(5, [(0, 1, 1), (0, 2, 1), (0, 3, 1)])
    for mode in ("symmetric", "row_stochastic", "double"):
        with pytest.raises(IsolatedNode):
            normalize(star, mode)


def test_double_no_convergence():
    star = Graph.from_edges(4, [(0, 1, 1), (0, 2, 1), (0, 3, 1)])
    with pytest.raises(NoConvergence):
        normalize(star, "double")


def test_row_stochastic():
    g = Graph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    a = g.adjacency().toarray()
    r = a / a.sum(1, keepdims=True)
    np.testing.assert_allclose(normalize(g, "row_stochastic").adjacency().toarray(), (r + r.T) / 2)


def test_laplacian_examples():
    edge = Graph.from_edges(2, [(0, 1, 1.0)])
    np.testing.assert_array_equal(laplacian(edge).toarray(), [[1, -1], [-1, 1]])
    ring = grid_adjacency(1, 4, boundary="torus")
    np.testing.assert_allclose(np.linalg.eigvalsh(laplacian(ring).toarray()), [0, 2, 2, 4], atol=1e-12)


def test_normalized_laplacian_null_vector():
    g = Graph.from_edges(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (0, 2, 1.0)])
    lap = laplacian(g, normalized=True)
    v = np.sqrt(g.degrees())
    np.testing.assert_allclose(lap @ v, 0, atol=1e-12)


def random_graph(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 40))
    a = np.triu(rng.random((n, n)) < 0.3, 1)
    i, j = np.nonzero(a)
    return Graph(n, i, j, rng.uniform(0.1, 3.0, i.size))


@given(st.integers(0, 100_000))
@settings(max_examples=60, deadline=None)
def test_graph_invariants(seed):
    g = random_graph(seed)
    a = g.adjacency().toarray()
    assert np.array_equal(a, a.T)
    assert np.trace(a) == 0
    lap = laplacian(g)
    assert np.array_equal(lap @ np.ones(g.n), np.zeros(g.n))
    assert np.linalg.eigvalsh(lap.toarray()).min() > -1e-9


@given(st.integers(0, 100_000))
@settings(max_examples=30, deadline=None)
def test_double_normalization_unit_degree(seed):
    rng = np.random.default_rng(seed)
    locs = SpatialLocations(rng.random((int(rng.integers(10, 60)), 2)))
    g = normalize(knn_graph(locs, 4), "double")
    assert np.max(np.abs(g.degrees() - 1)) < 1e-8
