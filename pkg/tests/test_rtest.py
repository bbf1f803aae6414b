import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadtest.core import FeatureMatrix, standardize
from quadtest.errors import DimensionMismatch, IndexOutOfRange
from quadtest.graph import grid_adjacency
from quadtest.kernel import DenseKernel, adjacency_kernel, car_grid_kernel, identity_kernel
from quadtest.qtest import q_statistic
from quadtest.rtest import all_pairs, r_null_pvalue, r_null_variance, r_statistic, rtest_block
from quadtest.sim import null_features
from quadtest.spectra import invisible_pattern

SWAP = DenseKernel(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_r_examples():
    z = np.random.default_rng(0).standard_normal(5)
    k = DenseKernel(np.diag([1.0, 2, 3, 4, 5]))
    assert r_statistic(z, z, k) == pytest.approx(q_statistic(z, k))
    x, y = np.array([1.0, -1.0]), np.array([-1.0, 1.0])
    # population-scaled vectors: -n times the Pearson correlation
    assert r_statistic(x, y, identity_kernel(2)) == -2.0
    # sample-standardized vectors: -(n - 1) times the Pearson correlation
    assert r_statistic(standardize(x), standardize(y), identity_kernel(2)) == pytest.approx(-1.0)
    with pytest.raises(DimensionMismatch):
        r_statistic(x, np.ones(3), identity_kernel(2))


def test_self_cancellation():
    moran = adjacency_kernel(grid_adjacency(1, 6, boundary="torus"))
    x = invisible_pattern(moran, "cancellation")
    assert abs(r_statistic(x, x, moran)) < 1e-12
    assert x @ x > 1.0


def test_r_null_pvalue_examples():
    assert r_null_pvalue(0.0, SWAP)[1] == 1.0
    z, p = r_null_pvalue(2.0, SWAP)
    assert z == pytest.approx(np.sqrt(2.0))


def test_r_null_variance_monte_carlo():
    k = adjacency_kernel(grid_adjacency(10, 10, boundary="torus"))
    rng = np.random.default_rng(3)
    x = rng.standard_normal((20_000, 100))
    y = rng.standard_normal((20_000, 100))
    r = np.einsum("ij,ij->i", x, k.matvec(y.T).T)
    assert r.var() == pytest.approx(r_null_variance(k), rel=0.1)
    # standardized inputs and the contrast-restricted variance
    xs = (x - x.mean(1, keepdims=True)) / x.std(1, ddof=1, keepdims=True)
    ys = (y - y.mean(1, keepdims=True)) / y.std(1, ddof=1, keepdims=True)
    rs = np.einsum("ij,ij->i", xs, k.matvec(ys.T).T)
    assert rs.var() == pytest.approx(r_null_variance(k, standardized=True), rel=0.1)


def naive(m, pairs, k, standardized=False):
    out = []
    for a, b in pairs:
        za, zb = standardize(m.values[a]).z, standardize(m.values[b]).z
        out.append(float(za @ (k.to_dense() @ zb)))
    return np.array(out)


def test_block_matches_naive():
    m = null_features(10, 64, seed=2)
    k = car_grid_kernel(8, 8)
    pairs = all_pairs(10, include_self=True)
    for bs in (1, 3, 256):
        res = rtest_block(m, pairs, k, block_size=bs)
        np.testing.assert_allclose([r.r for r in res], naive(m, pairs, k), rtol=0, atol=1e-10)
        assert [(r.feature_a, r.feature_b) for r in res] == [
            (m.feature_ids[a], m.feature_ids[b]) for a, b in pairs]


def test_block_self_pair_is_q():
    m = null_features(3, 25, seed=0)
    k = car_grid_kernel(5, 5)
    res = rtest_block(m, [(0, 0)], k)
    assert res[0].r == pytest.approx(q_statistic(standardize(m.values[0]), k), rel=1e-12)


def test_block_errors_and_flags():
    m = FeatureMatrix(np.vstack([np.ones(9), np.arange(9.0), np.arange(9.0) ** 2]))
    k = car_grid_kernel(3, 3)
    with pytest.raises(IndexOutOfRange):
        rtest_block(m, [(0, 3)], k)
    res = rtest_block(m, [(0, 1), (1, 2)], k)
    assert res[0].flag == "ConstantInput" and res[0].p_value == 1.0
    assert res[1].flag is None


def test_all_pairs_order():
    assert all_pairs(3) == [(0, 1), (0, 2), (1, 2)]
    assert all_pairs(2, include_self=True) == [(0, 0), (0, 1), (1, 1)]


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_bilinear_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    a = rng.standard_normal((n, n))
    psd = DenseKernel(a @ a.T)
    sym = DenseKernel(a + a.T)
    x1, x2, y = rng.standard_normal((3, n))
    s, t = rng.standard_normal(2)
    for k in (psd, sym):
        assert r_statistic(x1, y, k) == pytest.approx(r_statistic(y, x1, k), rel=1e-10, abs=1e-10)
        lhs = r_statistic(s * x1 + t * x2, y, k)
        rhs = s * r_statistic(x1, y, k) + t * r_statistic(x2, y, k)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    r = r_statistic(x1, y, psd)
    bound = q_statistic(x1, psd) * q_statistic(y, psd)
    assert r * r <= bound * (1 + 1e-8) + 1e-12
