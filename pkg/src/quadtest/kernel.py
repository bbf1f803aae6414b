"""Kernel operators with dense, implicit CAR and FFT grid backends.

Every operator is symmetric and exposes ``matvec`` on vectors or on blocks of
column vectors, ``trace``, ``trace_sq`` (the trace of ``K @ K``) and ``diag``.
Quantities that are expensive to compute are cached on the operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .core import SpatialLocations
from .errors import (
    AsymmetricProfile,
    BackendMismatch,
    BadRho,
    DimensionMismatch,
    ExactUnavailable,
    ImaginaryResidual,
    SolverDivergence,
    UnsupportedNu,
    ValidationError,
)
from .graph import Graph, laplacian

PROFILE_CUTOFF = 1e-12
IMAG_TOL = 1e-9
DENSE_CAP = 5000
_PROBE_CHUNK = 256


@dataclass(frozen=True)
class Hutchinson:
    """Stochastic trace estimation with Rademacher probes."""

    probes: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.probes < 1:
            raise ValidationError("hutchinson needs at least one probe")


TraceMethod = Union[str, Hutchinson]


def _probe_blocks(n: int, method: Hutchinson):
    rng = np.random.default_rng(method.seed)
    left = method.probes
    while left > 0:
        b = min(left, _PROBE_CHUNK)
        yield rng.choice(np.array([-1.0, 1.0]), size=(n, b))
        left -= b


def _check_method(method: TraceMethod) -> None:
    if not (method == "exact" or isinstance(method, Hutchinson)):
        raise ValidationError("method must be 'exact' or a Hutchinson instance")


class KernelOperator:
    """Symmetric linear operator on ``R^n``.

    Subclasses implement ``_apply`` on an ``(n, b)`` block and the exact
    reductions their backend supports.
    """

    backend = "abstract"

    def __init__(self, n: int, name: str, psd: Optional[bool] = None):
        self.n = int(n)
        self.name = name
        self._psd = psd
        self._cache: dict = {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, name={self.name!r})"

    # products
    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Apply the operator to a vector or to the columns of an ``(n, b)`` block."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n or v.ndim > 2:
            raise DimensionMismatch(f"expected leading dimension {self.n}, got {v.shape}")
        if v.ndim == 1:
            return self._apply(v[:, None])[:, 0]
        return self._apply(v)

    def _apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ones_response(self) -> np.ndarray:
        """``K @ 1``, cached."""
        if "k1" not in self._cache:
            self._cache["k1"] = self.matvec(np.ones(self.n))
        return self._cache["k1"]

    # reductions
    def trace(self, method: TraceMethod = "exact") -> float:
        _check_method(method)
        if method == "exact":
            return self._exact("trace")
        return self._hutchinson(method)[0]

    def trace_sq(self, method: TraceMethod = "exact") -> float:
        _check_method(method)
        if method == "exact":
            return self._exact("trace_sq")
        return self._hutchinson(method)[1]

    def diag(self, method: TraceMethod = "exact") -> np.ndarray:
        _check_method(method)
        if method == "exact":
            return self._exact("diag")
        return self._hutchinson(method)[2]

    def _exact(self, what: str):
        key = ("exact", what)
        if key not in self._cache:
            self._cache[key] = getattr(self, "_exact_" + what)()
        return self._cache[key]

    def _exact_trace(self) -> float:
        raise ExactUnavailable(f"exact trace unavailable for the {self.backend} backend")

    def _exact_trace_sq(self) -> float:
        raise ExactUnavailable(f"exact trace_sq unavailable for the {self.backend} backend")

    def _exact_diag(self) -> np.ndarray:
        raise ExactUnavailable(f"exact diagonal unavailable for the {self.backend} backend")

    def _hutchinson(self, method: Hutchinson):
        key = ("hutchinson", method)
        if key not in self._cache:
            tr = tr2 = 0.0
            dg = np.zeros(self.n)
            for v in _probe_blocks(self.n, method):
                kv = self._apply(v)
                prod = v * kv
                tr += prod.sum()
                tr2 += np.einsum("ij,ij->", kv, kv)
                dg += prod.sum(axis=1)
            p = method.probes
            self._cache[key] = (float(tr / p), float(tr2 / p), dg / p)
        return self._cache[key]

    def to_dense(self) -> np.ndarray:
        """Materialize the operator as an ``(n, n)`` array."""
        if self.n > DENSE_CAP:
            raise ExactUnavailable(f"refusing to materialize n={self.n} > {DENSE_CAP}")
        return self._apply(np.eye(self.n))

    # definiteness
    @property
    def psd(self) -> bool:
        """Whether the operator is positive semidefinite."""
        if self._psd is None:
            lam = np.linalg.eigvalsh(self.to_dense())
            self._psd = bool(lam[0] >= -1e-10 * max(1.0, np.abs(lam).max()))
        return self._psd


class DenseKernel(KernelOperator):
    """Explicit matrix, stored dense or sparse."""

    backend = "dense"

    def __init__(self, matrix, name: str = "dense", psd: Optional[bool] = None,
                 check_symmetric: bool = True):
        if sp.issparse(matrix):
            m = matrix.tocsr()
        else:
            m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("kernel matrix must be square")
        if check_symmetric:
            diff = abs(m - m.T)
            scale = abs(m).max() if m.shape[0] else 0.0
            if diff.max() > 1e-12 * max(scale, 1e-300):
                raise ValidationError("kernel matrix must be symmetric")
        super().__init__(m.shape[0], name, psd)
        self.matrix = m

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def _apply(self, v):
        return np.asarray(self.matrix @ v)

    def _exact_trace(self):
        return float(self.matrix.diagonal().sum())

    def _exact_trace_sq(self):
        if self.is_sparse:
            return float(np.sum(self.matrix.data ** 2))
        return float(np.einsum("ij,ij->", self.matrix, self.matrix))

    def _exact_diag(self):
        return np.asarray(self.matrix.diagonal(), dtype=float)

    def to_dense(self):
        return self.matrix.toarray() if self.is_sparse else np.array(self.matrix)


def _block_cg(a: sp.csr_matrix, b: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Conjugate gradients run independently on each column of ``b``."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.einsum("ij,ij->j", r, r)
    target = tol * np.sqrt(np.einsum("ij,ij->j", b, b))
    active = np.sqrt(rs) > target
    it = 0
    while np.any(active):
        if it >= max_iter:
            worst = float(np.max(np.sqrt(rs[active]) / target[active])) * tol
            raise SolverDivergence(
                f"CG stopped after {max_iter} iterations, relative residual {worst:.3g}"
            )
        idx = np.nonzero(active)[0]
        pa = p[:, idx]
        ap = a @ pa
        alpha = rs[idx] / np.einsum("ij,ij->j", pa, ap)
        x[:, idx] += alpha * pa
        r[:, idx] -= alpha * ap
        rs_new = np.einsum("ij,ij->j", r[:, idx], r[:, idx])
        p[:, idx] = r[:, idx] + (rs_new / rs[idx]) * pa
        rs[idx] = rs_new
        active[idx] = np.sqrt(rs_new) > target[idx]
        it += 1
    return x


def _car_weights(g: Graph) -> sp.csr_matrix:
    if g.normalization in ("symmetric", "double"):
        return g.adjacency()
    if g.normalization != "none":
        raise ValidationError("CAR needs a symmetric, double or unnormalized graph")
    d = g.degrees()
    s = np.where(d > 0, d, 1.0)
    w = g.w / np.sqrt(s[g.i] * s[g.j])
    return g.with_weights(w, "symmetric").adjacency() if g.n_edges else g.adjacency()


class CarKernel(KernelOperator):
    """Implicit ``(I - rho W)^-1`` applied through iterative solves.

    CG stops at relative residual ``solver_tol * (1 - rho) / 2``. Since
    ``|K| <= 1 / (1 - rho)``, products then carry an error of at most
    ``solver_tol / 2`` relative to the input, so ``|u'Kv - v'Ku|`` stays
    below ``solver_tol |u| |v|``.
    """

    backend = "implicit_car"

    def __init__(self, g: Graph, rho: float, solver_tol: float = 1e-8,
                 max_iter: Optional[int] = None, name: str = "car"):
        if not 0 < rho < 1:
            raise BadRho(f"rho must lie in (0, 1), got {rho}")
        super().__init__(g.n, name, psd=True)
        self.graph = g
        self.rho = float(rho)
        self.solver_tol = float(solver_tol)
        self.max_iter = int(max_iter) if max_iter is not None else 10 * g.n
        self.weights = _car_weights(g)
        self.system = (sp.identity(g.n, format="csr") - self.rho * self.weights).tocsr()

    def _apply(self, v):
        tol = 0.5 * self.solver_tol * (1.0 - self.rho)
        return _block_cg(self.system, v, tol, self.max_iter)

    def to_dense(self):
        if self.n > DENSE_CAP:
            raise ExactUnavailable(f"refusing to materialize n={self.n} > {DENSE_CAP}")
        return sla.solve(self.system.toarray(), np.eye(self.n), assume_a="pos")


class GridKernel(KernelOperator):
    """Stationary kernel on a torus lattice, applied by FFT convolution.

    Parameters
    ----------
    eigenvalues : ndarray, shape (rows, cols)
        Real FFT of the wrapped profile; entry ``[0, 0]`` belongs to the
        constant mode.
    """

    backend = "grid_fft"

    def __init__(self, eigenvalues: np.ndarray, name: str = "grid",
                 psd: Optional[bool] = None):
        lam = np.asarray(eigenvalues, dtype=float)
        if lam.ndim != 2:
            raise ValidationError("eigenvalues must be a 2-D array")
        super().__init__(lam.size, name, psd)
        self.dims = lam.shape
        self.eigenvalues = lam
        self._half = lam[:, : lam.shape[1] // 2 + 1]

    @classmethod
    def from_profile(cls, arr: np.ndarray, name: str = "grid",
                     psd: Optional[bool] = None) -> "GridKernel":
        """Build from a profile already wrapped onto the lattice."""
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2:
            raise ValidationError("profile must be a 2-D array")
        mirror = np.roll(arr[::-1, ::-1], (1, 1), axis=(0, 1))
        if np.max(np.abs(arr - mirror)) > 1e-12 * max(np.abs(arr).max(), 1e-300):
            raise AsymmetricProfile("profile must satisfy psi(u) = psi(-u)")
        lam = np.fft.fft2(arr)
        scale = max(1.0, float(np.abs(lam.real).max()))
        if np.abs(lam.imag).max() > IMAG_TOL * scale:
            raise ImaginaryResidual("FFT of the profile has a non-negligible imaginary part")
        k = cls(lam.real, name, psd)
        k._cache["profile"] = arr
        return k

    @property
    def profile(self) -> np.ndarray:
        if "profile" not in self._cache:
            self._cache["profile"] = np.fft.ifft2(self.eigenvalues).real
        return self._cache["profile"]

    def _apply(self, v):
        r, c = self.dims
        b = v.shape[1]
        grid = v.T.reshape(b, r, c)
        out = np.fft.irfft2(np.fft.rfft2(grid) * self._half, s=(r, c))
        return out.reshape(b, r * c).T

    def _exact_trace(self):
        return float(self.eigenvalues.sum())

    def _exact_trace_sq(self):
        return float(np.sum(self.eigenvalues ** 2))

    def _exact_diag(self):
        return np.full(self.n, self.profile[0, 0])

    def ones_response(self):
        return np.full(self.n, self.eigenvalues[0, 0])

    def to_dense(self):
        if self.n > DENSE_CAP:
            raise ExactUnavailable(f"refusing to materialize n={self.n} > {DENSE_CAP}")
        r, c = self.dims
        rr, cc = np.divmod(np.arange(self.n), c)
        return self.profile[(rr[:, None] - rr[None, :]) % r, (cc[:, None] - cc[None, :]) % c]

    @property
    def psd(self) -> bool:
        if self._psd is None:
            lam = self.eigenvalues
            self._psd = bool(lam.min() >= -1e-10 * max(1.0, np.abs(lam).max()))
        return self._psd


@dataclass(frozen=True)
class KernelProfile:
    """Stationary kernel weights ``psi(offset)`` on lattice offsets.

    Offsets are ``(d_row, d_col)`` pairs; the set must be point-symmetric.
    """

    offsets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).ravel()
        if off.shape[0] != w.size:
            raise ValidationError("one weight per offset is required")
        table = {tuple(o): x for o, x in zip(off.tolist(), w)}
        if len(table) != w.size:
            raise ValidationError("duplicate offsets")
        for (a, b), x in table.items():
            if table.get((-a, -b)) != x:
                raise AsymmetricProfile(f"psi({a},{b}) != psi({-a},{-b})")
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "weights", w)

    @classmethod
    def four_neighbor(cls, weight: float = 1.0) -> "KernelProfile":
        return cls([(0, 1), (0, -1), (1, 0), (-1, 0)], [weight] * 4)

    def to_array(self, dims: tuple[int, int]) -> np.ndarray:
        r, c = dims
        arr = np.zeros((r, c))
        seen = np.zeros((r, c), dtype=bool)
        for (a, b), x in zip(self.offsets.tolist(), self.weights):
            cell = (a % r, b % c)
            if seen[cell]:
                raise ValidationError("grid dims do not cover the profile support")
            seen[cell] = True
            arr[cell] = x
        return arr


def stationary_grid_kernel(profile, dims: tuple[int, int], boundary: str = "torus",
                           name: str = "profile") -> GridKernel:
    """FFT operator for a stationary profile on a torus grid.

    Parameters
    ----------
    profile : KernelProfile or ndarray
        Either offset weights or an array of shape ``dims`` indexed by wrapped
        offsets.
    dims : (rows, cols)
    boundary : {"torus"}
        Open boundaries are not circulant; use the dense backend instead.
    """
    if boundary != "torus":
        raise BackendMismatch("the FFT backend supports torus boundaries only")
    dims = (int(dims[0]), int(dims[1]))
    if isinstance(profile, KernelProfile):
        arr = profile.to_array(dims)
    else:
        arr = np.asarray(profile, dtype=float)
        if arr.shape != dims:
            raise ValidationError(f"profile shape {arr.shape} does not match dims {dims}")
    return GridKernel.from_profile(arr, name=name)


# distance kernels

def _psi(kind: str, d: np.ndarray, bandwidth: float, nu: float = 1.5) -> np.ndarray:
    if kind == "gaussian":
        out = np.exp(-(d ** 2) / (2.0 * bandwidth ** 2))
    else:
        t = d / bandwidth
        if nu == 0.5:
            out = np.exp(-t)
        elif nu == 1.5:
            s = np.sqrt(3.0) * t
            out = (1.0 + s) * np.exp(-s)
        else:
            s = np.sqrt(5.0) * t
            out = (1.0 + s + s * s / 3.0) * np.exp(-s)
    out[out < PROFILE_CUTOFF] = 0.0
    return out


def _pairwise_distances(locs: SpatialLocations) -> np.ndarray:
    pts = locs.points
    diff = np.abs(pts[:, None, :] - pts[None, :, :])
    if locs.grid is not None and locs.grid.boundary == "torus":
        period = np.array([locs.grid.rows, locs.grid.cols], dtype=float)
        diff = np.minimum(diff, period - diff)
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def _torus_offsets(rows: int, cols: int) -> np.ndarray:
    r = np.arange(rows)
    c = np.arange(cols)
    dr = np.minimum(r, rows - r)[:, None]
    dc = np.minimum(c, cols - c)[None, :]
    return np.sqrt(dr ** 2 + dc ** 2)


def _distance_kernel(kind: str, locs: SpatialLocations, bandwidth: float,
                     backend: str, nu: float = 1.5) -> KernelOperator:
    if not bandwidth > 0:
        raise ValidationError("bandwidth must be positive")
    name = kind
    if backend == "grid_fft":
        g = locs.grid
        if g is None or g.boundary != "torus":
            raise BackendMismatch("grid_fft requires torus grid locations")
        arr = _psi(kind, _torus_offsets(g.rows, g.cols), bandwidth, nu)
        return GridKernel.from_profile(arr, name=name, psd=True)
    if backend != "dense":
        raise BackendMismatch(f"unknown backend {backend!r} for a distance kernel")
    if locs.n > DENSE_CAP:
        raise ExactUnavailable(f"dense kernel with n={locs.n} exceeds the cap {DENSE_CAP}")
    return DenseKernel(_psi(kind, _pairwise_distances(locs), bandwidth, nu), name=name,
                       psd=True, check_symmetric=False)


def gaussian_kernel(locs: SpatialLocations, bandwidth: float = 2.0,
                    backend: str = "dense") -> KernelOperator:
    """Gaussian kernel ``exp(-d**2 / (2 bandwidth**2))``.

    Distances wrap around the torus when ``locs`` is a torus grid. Values
    below 1e-12 are set to zero in both backends.
    """
    return _distance_kernel("gaussian", locs, bandwidth, backend)


def matern_kernel(locs: SpatialLocations, nu: float = 1.5, bandwidth: float = 2.0,
                  backend: str = "dense") -> KernelOperator:
    """Matérn kernel with half-integer smoothness ``nu`` in {0.5, 1.5, 2.5}."""
    for allowed in (0.5, 1.5, 2.5):
        if np.isclose(nu, allowed, rtol=0, atol=1e-12):
            return _distance_kernel("matern", locs, bandwidth, backend, allowed)
    raise UnsupportedNu(f"nu must be 0.5, 1.5 or 2.5, got {nu}")


# graph kernels

def adjacency_kernel(g: Graph) -> DenseKernel:
    """Moran kernel ``K = W`` (sparse, trace zero, indefinite unless empty)."""
    return DenseKernel(g.adjacency(), name="moran", psd=g.n_edges == 0,
                       check_symmetric=False)


def laplacian_kernel(g: Graph, normalized: bool = False) -> DenseKernel:
    """Graph Laplacian as a positive semidefinite operator."""
    return DenseKernel(laplacian(g, normalized), name="laplacian", psd=True,
                       check_symmetric=False)


def car_kernel(g: Graph, rho: float = 0.9, solver_tol: float = 1e-8,
               max_iter: Optional[int] = None) -> CarKernel:
    """Implicit CAR kernel ``(I - rho W)^-1``.

    ``W`` is the graph's weight matrix when it is symmetric- or
    double-normalized; an unnormalized graph is symmetric-normalized first,
    with isolated nodes keeping a zero row.
    """
    return CarKernel(g, rho, solver_tol, max_iter)


def car_grid_kernel(rows: int, cols: int, rho: float = 0.9) -> GridKernel:
    """CAR kernel of the normalized four-neighbour torus, built from its spectrum."""
    if not 0 < rho < 1:
        raise BadRho(f"rho must lie in (0, 1), got {rho}")
    if rows < 3 or cols < 3:
        raise ValidationError("torus CAR grid needs at least 3 rows and 3 columns")
    mu = 0.5 * (np.cos(2 * np.pi * np.arange(rows) / rows)[:, None]
                + np.cos(2 * np.pi * np.arange(cols) / cols)[None, :])
    return GridKernel(1.0 / (1.0 - rho * mu), name="car", psd=True)


def identity_kernel(n: int) -> DenseKernel:
    return DenseKernel(sp.identity(n, format="csr"), name="identity", psd=True,
                       check_symmetric=False)


# functional interface

def matvec(k: KernelOperator, v: np.ndarray) -> np.ndarray:
    return k.matvec(v)


def trace(k: KernelOperator, method: TraceMethod = "exact") -> float:
    return k.trace(method)


def trace_sq(k: KernelOperator, method: TraceMethod = "exact") -> float:
    return k.trace_sq(method)
