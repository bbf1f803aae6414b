import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from quadtest.core import SpatialLocations
from quadtest.errors import (
    AsymmetricProfile,
    BackendMismatch,
    BadRho,
    DimensionMismatch,
    ExactUnavailable,
    SolverDivergence,
    UnsupportedNu,
)
from quadtest.graph import Graph, grid_adjacency, knn_graph, laplacian, normalize
from quadtest.kernel import (
    DenseKernel,
    GridKernel,
    Hutchinson,
    KernelProfile,
    adjacency_kernel,
    car_grid_kernel,
    car_kernel,
    gaussian_kernel,
    identity_kernel,
    laplacian_kernel,
    matern_kernel,
    stationary_grid_kernel,
)

# (1 + sqrt(3)) exp(-sqrt(3)), evaluated with mpmath at 30 digits
MATERN15_AT_L = 0.4833577245965077


def line(*xs):
    return SpatialLocations(np.array(xs, dtype=float)[:, None])


def test_gaussian_values():
    k = gaussian_kernel(line(0.0, 2.0 * np.sqrt(2.0)), bandwidth=2.0).to_dense()
    assert k[0, 0] == 1.0
    assert k[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-14)


def test_matern_values():
    locs = line(0.0, 3.0)
    assert matern_kernel(locs, 0.5, 3.0).to_dense()[0, 1] == pytest.approx(np.exp(-1), rel=1e-14)
    k = matern_kernel(locs, 1.5, 3.0).to_dense()
    assert k[0, 0] == 1.0
    assert k[0, 1] == pytest.approx(MATERN15_AT_L, rel=1e-14)
    with pytest.raises(UnsupportedNu):
        matern_kernel(locs, 1.0)


def test_grid_fft_requires_grid():
    with pytest.raises(BackendMismatch):
        gaussian_kernel(line(0.0, 1.0), backend="grid_fft")
    with pytest.raises(BackendMismatch):
        gaussian_kernel(SpatialLocations.from_grid(4, 4, "open"), backend="grid_fft")


@pytest.mark.parametrize("make", [
    lambda l, b: gaussian_kernel(l, 2.0, b),
    lambda l, b: matern_kernel(l, 1.5, 2.0, b),
    lambda l, b: matern_kernel(l, 2.5, 1.3, b),
])
def test_distance_kernel_backends(make):
    locs = SpatialLocations.from_grid(8, 8, "torus")
    d, f = make(locs, "dense"), make(locs, "grid_fft")
    v = np.random.default_rng(1).standard_normal((64, 20))
    np.testing.assert_allclose(f.matvec(v), d.matvec(v), atol=1e-10)
    assert f.trace() == pytest.approx(d.trace(), rel=1e-12)
    assert f.trace_sq() == pytest.approx(d.trace_sq(), rel=1e-12)


def test_adjacency_kernel():
    k = adjacency_kernel(Graph.from_edges(2, [(0, 1, 1.0)]))
    np.testing.assert_array_equal(k.to_dense(), [[0, 1], [1, 0]])
    assert k.trace() == 0
    assert k.trace_sq() == 2
    np.testing.assert_array_equal(k.matvec(np.array([1.0, 2.0])), [2.0, 1.0])
    ring = adjacency_kernel(grid_adjacency(1, 4, boundary="torus"))
    np.testing.assert_allclose(np.linalg.eigvalsh(ring.to_dense()), [-2, 0, 0, 2], atol=1e-12)
    empty = adjacency_kernel(Graph.from_edges(3, []))
    np.testing.assert_array_equal(empty.matvec(np.ones(3)), 0)


def test_laplacian_kernel():
    k = laplacian_kernel(Graph.from_edges(2, [(0, 1, 1.0)]))
    z = np.array([1.0, -1.0])
    assert z @ k.matvec(z) == 4.0
    assert np.all(k.matvec(np.ones(2)) == 0)
    ring = laplacian_kernel(grid_adjacency(1, 4, boundary="torus"))
    assert np.linalg.eigvalsh(ring.to_dense()).max() == pytest.approx(4.0)


def test_car_examples():
    edge = Graph.from_edges(2, [(0, 1, 1.0)], normalization="symmetric")
    k = car_kernel(edge, 0.5)
    np.testing.assert_allclose(k.matvec(np.array([1.0, 0.0])), [4 / 3, 2 / 3], rtol=1e-8)
    lam = np.linalg.eigvalsh(car_kernel(edge, 0.9).to_dense())
    np.testing.assert_allclose(lam, [1 / 1.9, 10.0], rtol=1e-12)
    empty = car_kernel(Graph.from_edges(3, []), 0.9)
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(empty.matvec(v), v)


def test_car_errors():
    g = grid_adjacency(1, 4, boundary="torus")
    for rho in (0.0, 1.0, -0.1):
        with pytest.raises(BadRho):
            car_kernel(g, rho)
    k = car_kernel(g, 0.9)
    with pytest.raises(ExactUnavailable):
        k.trace_sq("exact")
    with pytest.raises(SolverDivergence):
        car_kernel(g, 0.9, max_iter=1).matvec(np.array([1.0, 0, 0, 0]))
    with pytest.raises(DimensionMismatch):
        k.matvec(np.ones(3))


def test_car_grid_matches_implicit():
    g = grid_adjacency(6, 7, boundary="torus")
    a = car_grid_kernel(6, 7, 0.9).to_dense()
    b = car_kernel(g, 0.9, solver_tol=1e-13).to_dense()
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_profile_examples():
    delta = np.zeros((3, 4))
    delta[0, 0] = 1.0
    k = stationary_grid_kernel(delta, (3, 4))
    v = np.random.default_rng(0).standard_normal(12)
    np.testing.assert_allclose(k.matvec(v), v, atol=1e-14)
    ring = stationary_grid_kernel(np.array([[0.0, 1.0, 0.0, 1.0]]), (1, 4))
    np.testing.assert_allclose(ring.eigenvalues.ravel(), [2, 0, -2, 0], atol=1e-14)


def test_profile_asymmetric():
    with pytest.raises(AsymmetricProfile):
        stationary_grid_kernel(np.array([[0.0, 1.0, 0.0, 0.0]]), (1, 4))
    with pytest.raises(AsymmetricProfile):
        KernelProfile([(0, 1)], [1.0])


def test_four_neighbor_profile_vs_dense():
    k = stationary_grid_kernel(KernelProfile.four_neighbor(), (16, 16))
    d = adjacency_kernel(grid_adjacency(16, 16, boundary="torus"))
    v = np.random.default_rng(2).standard_normal((256, 20))
    np.testing.assert_allclose(k.matvec(v), d.matvec(v), atol=1e-10)


def test_trace_examples():
    i3 = identity_kernel(3)
    for seed in range(4):
        assert i3.trace_sq(Hutchinson(7, seed)) == 3.0
    with pytest.raises(ValueError):
        Hutchinson(0)


def test_car_ring_hutchinson():
    ring = grid_adjacency(1, 100, boundary="torus")
    k = car_kernel(ring, 0.9)
    oracle = np.linalg.inv(np.eye(100) - 0.9 * normalize(ring, "symmetric").adjacency().toarray())
    exact = float(np.sum(oracle ** 2))
    assert abs(k.trace_sq(Hutchinson(1000, 0)) - exact) < 0.05 * exact


def test_hutchinson_unbiased():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((30, 30))
    k = DenseKernel(a + a.T)
    exact = k.trace_sq()
    est = [DenseKernel(a + a.T).trace_sq(Hutchinson(50, s)) for s in range(200)]
    se = np.std(est, ddof=1) / np.sqrt(len(est))
    assert abs(np.mean(est) - exact) < 4 * se
    # error shrinks like probes ** -1/2
    big = [DenseKernel(a + a.T).trace_sq(Hutchinson(800, s)) for s in range(50)]
    ratio = np.std(est, ddof=1) / np.std(big, ddof=1)
    assert 2.5 < ratio < 6.5


def random_normalized_graph(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 80))
    locs = SpatialLocations(rng.random((n, 2)))
    return normalize(knn_graph(locs, int(rng.integers(2, 6))), "symmetric")


@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]))
@settings(max_examples=50, deadline=None)
def test_car_eigen_relation(seed, rho):
    g = random_normalized_graph(seed)
    lam = np.linalg.eigvalsh(car_kernel(g, rho).to_dense())
    mu = np.linalg.eigvalsh(g.adjacency().toarray())
    assert lam.min() > 0
    np.testing.assert_allclose(np.sort(lam), np.sort(1.0 / (1.0 - rho * mu)), rtol=1e-8)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_kernels_symmetric(seed):
    g = random_normalized_graph(seed)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, g.n))
    for k in (car_kernel(g, 0.9), adjacency_kernel(g), laplacian_kernel(g)):
        assert abs(u @ k.matvec(v) - v @ k.matvec(u)) < 1e-8 * np.linalg.norm(u) * np.linalg.norm(v)


@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_grid_profile_real_spectrum(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((rows, cols))
    sym = a + np.roll(a[::-1, ::-1], (1, 1), axis=(0, 1))  # psi(u) + psi(-u)
    k = stationary_grid_kernel(sym, (rows, cols))
    dense = k.to_dense()
    np.testing.assert_allclose(dense, dense.T, atol=1e-12)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(dense)), np.sort(k.eigenvalues.ravel()),
                               atol=1e-9)


def test_sparse_dense_kernel():
    k = DenseKernel(sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]])))
    assert k.trace() == 5.0
    assert k.trace_sq() == 15.0
    np.testing.assert_array_equal(k.diag(), [2.0, 3.0])


def test_psd_flag():
    assert car_grid_kernel(4, 4).psd
    assert not adjacency_kernel(grid_adjacency(1, 4, boundary="torus")).psd
    assert DenseKernel(np.eye(3)).psd
