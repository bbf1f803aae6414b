"""Univariate quadratic-form test ``Q = z' K z``.

Two null conventions are available.

``iid``
    ``z`` has independent entries with mean 0, variance 1 and fourth moment
    ``mu4``. Then ``E[Q] = tr K`` and
    ``Var Q = (mu4 - 3) sum K_ii**2 + 2 tr(K**2)``.

``standardized``
    ``z`` was centered and scaled with sample estimates, so it lies on the
    sphere of radius ``sqrt(n - 1)`` inside the contrasts (vectors orthogonal
    to the constant). For Gaussian data it is uniform there and the exact
    moments follow from ``K`` restricted to the contrasts, written ``A`` with
    ``m = n - 1`` eigenvalues::

        E[Q]   = tr A = tr K - 1'K1 / n
        Var Q  = 2 m / (m + 2) * (tr A**2 - (tr A)**2 / m)

    with ``tr A**2 = tr K**2 - 2 |K1|**2 / n + (1'K1)**2 / n**2``. Both need
    only one extra product ``K1``. The statistic is compared at
    ``Q * m / |z|**2`` which makes the test invariant to the scaling model.
"""

from __future__ import annotations

import concurrent.futures as cf
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import stats

from .core import FeatureMatrix, NullMoments, StandardizedVector, TestResult, bh_adjust, standardize
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptySpectrum,
    NonPositiveTrace,
    QuadTestError,
    ValidationError,
    ZeroVariance,
)
from .kernel import CarKernel, Hutchinson, KernelOperator, TraceMethod
from .spectra import Spectrum, kernel_spectrum

PVALUE_METHODS = ("auto", "normal", "welch", "liu", "permutation")
TAILS = ("upper", "lower", "two_sided")
NULLS = ("standardized", "iid")
_SQRT2 = np.sqrt(2.0)
_CHUNK = 256


def _vector(z: Union[StandardizedVector, np.ndarray]) -> np.ndarray:
    if isinstance(z, StandardizedVector):
        return z.z
    return np.asarray(z, dtype=float)


def q_statistic(z: Union[StandardizedVector, np.ndarray], k: KernelOperator) -> float:
    """``z' K z`` from one product and one dot product."""
    v = _vector(z)
    if v.ndim != 1 or v.shape[0] != k.n:
        raise DimensionMismatch(f"z has length {v.shape[0]} but the kernel has n={k.n}")
    return float(v @ k.matvec(v))


def resolve_trace_method(k: KernelOperator, method: Union[str, Hutchinson]) -> TraceMethod:
    """Map ``"auto"`` to exact reductions, or to 1000 probes for implicit kernels."""
    if method == "auto":
        return Hutchinson(1000, 0) if isinstance(k, CarKernel) else "exact"
    return method


def null_moments(k: KernelOperator, mu4: float = 3.0, trace_sq_method: TraceMethod = "exact",
                 standardized: bool = False) -> NullMoments:
    """Null mean and variance of ``Q``.

    Parameters
    ----------
    k : KernelOperator
    mu4 : float
        Fourth moment of the standardized data; 3 for Gaussian data. The
        correction ``(mu4 - 3) sum K_ii**2`` needs the kernel diagonal.
    trace_sq_method : "exact", "auto" or Hutchinson
        Used for the trace, the trace of the square and the diagonal.
    standardized : bool
        Use the moments of sample-standardized data (module docstring)
        instead of the i.i.d. moments.
    """
    if not mu4 >= 1:
        raise ValidationError("mu4 must be at least 1")
    method = resolve_trace_method(k, trace_sq_method)
    tr = k.trace(method)
    tr2 = k.trace_sq(method)
    extra = 0.0
    if mu4 != 3.0:
        extra = (mu4 - 3.0) * float(np.sum(k.diag(method) ** 2))
    if not standardized:
        return NullMoments(tr, extra + 2.0 * tr2, float(mu4), False, None)
    n = k.n
    m = n - 1
    k1 = k.ones_response()
    s1 = float(k1.sum())
    mean = tr - s1 / n
    tr_a2 = tr2 - 2.0 * float(k1 @ k1) / n + s1 * s1 / (n * n)
    b2 = max(tr_a2 - mean * mean / m, 0.0)
    var = 2.0 * m * b2 / (m + 2.0) + extra
    return NullMoments(mean, var, float(mu4), True, m)


def z_score(q: float, m: NullMoments) -> float:
    """``(q - mean) / sqrt(variance)``."""
    if not m.variance > 0:
        raise ZeroVariance("null variance is zero")
    return float((q - m.mean) / np.sqrt(m.variance))


def pvalue_normal(zscore: float, tail: str = "upper") -> float:
    """Standard normal tail probability."""
    if tail == "upper":
        return float(stats.norm.sf(zscore))
    if tail == "lower":
        return float(stats.norm.cdf(zscore))
    if tail == "two_sided":
        return float(min(1.0, 2.0 * stats.norm.sf(abs(zscore))))
    raise ValidationError(f"tail must be one of {TAILS}")


def pvalue_welch(q: float, tr: float, tr2: float) -> float:
    """Upper tail of ``scale * chi2(df)`` with ``scale = tr2 / tr``, ``df = tr**2 / tr2``.

    This gamma matches mean ``tr`` and variance ``2 tr2``.
    """
    if not (tr > 0 and tr2 > 0):
        raise NonPositiveTrace("Welch approximation needs tr > 0 and tr2 > 0")
    scale = tr2 / tr
    df = tr * tr / tr2
    return float(stats.chi2.sf(q / scale, df))


def liu_cumulants(s: Spectrum, standardized: bool = False) -> tuple[float, float, float, float]:
    """First four cumulants of the null distribution of ``Q``.

    Without standardization ``Q = sum lam_i chi2_1`` and ``kappa_r =
    2**(r-1) (r-1)! sum lam**r``. With standardization ``Q = m u'Au`` for
    ``u`` uniform on the unit sphere of the ``m`` contrasts; its central
    moments are those of ``g'Bg`` with ``B = A - mean(lam) I`` divided by the
    moments of ``|g|**2 ~ chi2_m``.
    """
    lam = np.asarray(s.eigenvalues, dtype=float)
    if lam.size == 0:
        raise EmptySpectrum("spectrum is empty")
    if not standardized:
        c = [float(np.sum(lam ** r)) for r in (1, 2, 3, 4)]
        return c[0], 2.0 * c[1], 8.0 * c[2], 48.0 * c[3]
    m = float(lam.size)
    b = lam - lam.mean()
    b2, b3, b4 = (float(np.sum(b ** r)) for r in (2, 3, 4))
    k1 = float(lam.sum())
    k2 = 2.0 * m * b2 / (m + 2.0)
    k3 = 8.0 * b3 * m * m / ((m + 2.0) * (m + 4.0))
    d = (m + 2.0) * (m + 4.0) * (m + 6.0)
    k4 = 48.0 * b4 * m ** 3 / d - 96.0 * b2 * b2 * m * m * (m + 3.0) / ((m + 2.0) * d)
    return k1, k2, k3, k4


def liu_sf(q: float, k1: float, k2: float, k3: float, k4: float) -> float:
    """Four-cumulant noncentral chi-square approximation to ``P(Q > q)``.

    Falls back to the normal tail when the skewness is not positive, where
    the chi-square family cannot match it.
    """
    if not k2 > 0:
        raise ZeroVariance("null variance is zero")
    s1 = k3 / k2 ** 1.5 / (2.0 * _SQRT2)
    s2 = k4 / (12.0 * k2 * k2)
    t = (q - k1) / np.sqrt(k2)
    if not s1 > 0:
        return float(stats.norm.sf(t))
    gap = s1 * s1 - s2
    if s2 > 0 and gap > 1e-10 * s2:
        a = 1.0 / (s1 - np.sqrt(gap))
        delta = max(s1 * a ** 3 - a * a, 0.0)
        df = a * a - 2.0 * delta
    else:
        a = 1.0 / s1
        delta = 0.0
        df = a * a
    x = t * _SQRT2 * a + df + delta
    if delta > 0:
        return float(stats.ncx2.sf(x, df, delta))
    return float(stats.chi2.sf(x, df))


def pvalue_liu(q: float, spectrum: Spectrum, standardized: bool = False) -> float:
    """Liu's four-moment approximation from the kernel spectrum.

    Parameters
    ----------
    q : float
    spectrum : Spectrum
        Normally the centered spectrum.
    standardized : bool
        Match the cumulants of sample-standardized data instead of the i.i.d.
        weighted chi-square sum.
    """
    return liu_sf(q, *liu_cumulants(spectrum, standardized))


def _permuted_q(z: np.ndarray, k: KernelOperator, n_perm: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = z.shape[0]
    out = np.empty(n_perm)
    base = np.tile(np.arange(n), (min(_CHUNK, n_perm), 1))
    for start in range(0, n_perm, _CHUNK):
        b = min(_CHUNK, n_perm - start)
        zp = z[rng.permuted(base[:b], axis=1)].T
        out[start:start + b] = np.einsum("ij,ij->j", zp, k.matvec(zp))
    return out


def pvalue_permutation(z: Union[StandardizedVector, np.ndarray], k: KernelOperator,
                       n_perm: int = 999, seed=0, tail: str = "upper") -> float:
    """Permutation p-value ``(1 + #{Q_perm >= Q_obs}) / (1 + n_perm)``.

    Ties within a relative 1e-10 count as exceedances. The two-sided version
    measures distance from the mean of the permuted statistics.
    """
    if n_perm < 100:
        raise ValidationError("n_perm must be at least 100")
    if tail not in TAILS:
        raise ValidationError(f"tail must be one of {TAILS}")
    v = _vector(z)
    q = q_statistic(v, k)
    qs = _permuted_q(v, k, n_perm, seed)
    tol = 1e-10 * max(abs(q), float(v @ v))
    if tail == "upper":
        hits = np.sum(qs >= q - tol)
    elif tail == "lower":
        hits = np.sum(qs <= q + tol)
    else:
        c = qs.mean()
        hits = np.sum(np.abs(qs - c) >= abs(q - c) - tol)
    return float((1 + hits) / (1 + n_perm))


@dataclass(frozen=True)
class QTestConfig:
    """Settings for :func:`run_qtest_batch`.

    ``pvalue_method="auto"`` uses Welch for positive semidefinite kernels and
    the normal approximation otherwise. ``tail=None`` picks the upper tail for
    positive semidefinite kernels and two-sided otherwise.
    """

    pvalue_method: str = "auto"
    n_perm: int = 999
    seed: int = 0
    model: str = "gaussian"
    dispersion: Optional[float] = None
    kurtosis_mu4: float = 3.0
    trace_sq_method: Union[str, Hutchinson] = "auto"
    bh: bool = True
    null: str = "standardized"
    tail: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if self.pvalue_method not in PVALUE_METHODS:
            raise ConfigError(f"pvalue_method must be one of {PVALUE_METHODS}")
        if self.pvalue_method == "permutation" and self.n_perm < 100:
            raise ConfigError("n_perm must be at least 100")
        if self.null not in NULLS:
            raise ConfigError(f"null must be one of {NULLS}")
        if self.tail is not None and self.tail not in TAILS:
            raise ConfigError(f"tail must be one of {TAILS}")
        if self.threads < 1:
            raise ConfigError("threads must be positive")


def resolve_method(k: KernelOperator, cfg: QTestConfig) -> tuple[str, str]:
    """Pick the p-value method and tail for a kernel, rejecting bad pairings."""
    psd = k.psd
    method = cfg.pvalue_method
    if method == "auto":
        method = "welch" if psd else "normal"
    if method in ("welch", "liu") and not psd:
        raise ConfigError(f"{method} needs a positive semidefinite kernel; use normal or permutation")
    tail = cfg.tail or ("upper" if psd else "two_sided")
    return method, tail


def _batch_products(z: np.ndarray, k: KernelOperator, threads: int) -> np.ndarray:
    """Column-wise ``z' K z`` for an ``(n, f)`` block."""
    f = z.shape[1]
    chunks = [(s, min(s + _CHUNK, f)) for s in range(0, f, _CHUNK)]

    def work(bounds):
        a, b = bounds
        blk = z[:, a:b]
        return np.einsum("ij,ij->j", blk, k.matvec(blk))

    if threads > 1 and len(chunks) > 1:
        with cf.ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros(0)


def run_qtest_batch(m: FeatureMatrix, k: KernelOperator,
                    cfg: QTestConfig = QTestConfig()) -> list[TestResult]:
    """Test every feature of ``m`` against kernel ``k``.

    Features that cannot be standardized (for example constant ones) get
    ``p = 1`` and a ``flag``; the batch never aborts on them. Kernel-level
    quantities are computed once. Results follow the input feature order.
    """
    if m.n_locations != k.n:
        raise DimensionMismatch(f"matrix has {m.n_locations} columns but the kernel has n={k.n}")
    method, tail = resolve_method(k, cfg)
    standardized = cfg.null == "standardized"
    moments = null_moments(k, cfg.kurtosis_mu4, cfg.trace_sq_method, standardized)
    cumulants = None
    if method == "liu":
        cumulants = liu_cumulants(kernel_spectrum(k, centered=True), standardized)

    n = k.n
    zs, flags = [], []
    for row in m.values:
        try:
            zs.append(standardize(row, cfg.model, cfg.dispersion).z)
            flags.append(None)
        except QuadTestError as exc:
            zs.append(None)
            flags.append(type(exc).__name__)
    ok = [i for i, f in enumerate(flags) if f is None]
    z_ok = np.column_stack([zs[i] for i in ok]) if ok else np.zeros((n, 0))
    q_ok = _batch_products(z_ok, k, cfg.threads)

    results: list[dict] = []
    pos = {i: j for j, i in enumerate(ok)}
    for i, fid in enumerate(m.feature_ids):
        if flags[i] is not None:
            results.append(dict(feature_id=fid, q=float("nan"), z_score=float("nan"),
                                p_value=1.0, flag=flags[i]))
            continue
        q = float(q_ok[pos[i]])
        zv = z_ok[:, pos[i]]
        q_eff = q * (n - 1) / float(zv @ zv) if standardized else q
        try:
            zsc = z_score(q_eff, moments)
            if method == "normal":
                p = pvalue_normal(zsc, tail)
            elif method == "welch":
                p = pvalue_welch(q_eff, moments.mean, moments.variance / 2.0)
            elif method == "liu":
                p = liu_sf(q_eff, *cumulants)
            else:
                seed = np.random.SeedSequence([cfg.seed, i])
                p = pvalue_permutation(zv, k, cfg.n_perm, seed, tail)
            flag = None
        except QuadTestError as exc:
            zsc, p, flag = float("nan"), 1.0, type(exc).__name__
        results.append(dict(feature_id=fid, q=q, z_score=zsc, p_value=float(p), flag=flag))

    padj = bh_adjust([r["p_value"] for r in results]) if cfg.bh else None
    return [
        TestResult(p_adjusted=None if padj is None else float(padj[i]), method=method,
                   kernel_name=k.name, **r)
        for i, r in enumerate(results)
    ]
