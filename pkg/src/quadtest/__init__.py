"""Quadratic-form tests for spatial structure in features measured at locations."""

from .core import (
    FeatureMatrix,
    GridSpec,
    NullMoments,
    SpatialLocations,
    StandardizedVector,
    TestResult,
    bh_adjust,
    standardize,
)
from .graph import Graph, grid_adjacency, knn_graph, laplacian, normalize, radius_graph, tree_sibling_graph
from .kernel import (
    CarKernel,
    DenseKernel,
    GridKernel,
    Hutchinson,
    KernelOperator,
    KernelProfile,
    adjacency_kernel,
    car_grid_kernel,
    car_kernel,
    gaussian_kernel,
    laplacian_kernel,
    matern_kernel,
    matvec,
    stationary_grid_kernel,
    trace,
    trace_sq,
)
from .qtest import (
    QTestConfig,
    null_moments,
    pvalue_liu,
    pvalue_normal,
    pvalue_permutation,
    pvalue_welch,
    q_statistic,
    run_qtest_batch,
    z_score,
)
from .rtest import PairResult, r_null_pvalue, r_statistic, rtest_block
from .spectra import (
    DefinitenessReport,
    Spectrum,
    classify_definiteness,
    dense_spectrum,
    grid_spectrum,
    invisible_pattern,
    radial_power,
)

__version__ = "0.1.0"
