"""Bivariate statistic ``R = x' K y`` for spatial co-variation of feature pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .core import FeatureMatrix, StandardizedVector, standardize
from .errors import DimensionMismatch, IndexOutOfRange, QuadTestError, ValidationError, ZeroVariance
from .kernel import KernelOperator, TraceMethod
from .qtest import _vector, pvalue_normal, resolve_trace_method


@dataclass(frozen=True)
class PairResult:
    feature_a: str
    feature_b: str
    r: float
    z_score: float
    p_value: float
    flag: str | None = None


def r_statistic(x: Union[StandardizedVector, np.ndarray],
                y: Union[StandardizedVector, np.ndarray], k: KernelOperator) -> float:
    """``x' K y``; with ``K = I`` this is the inner product of the two vectors."""
    xv, yv = _vector(x), _vector(y)
    if xv.shape != (k.n,) or yv.shape != (k.n,):
        raise DimensionMismatch("x, y and the kernel must share dimension n")
    return float(xv @ k.matvec(yv))


def r_null_variance(k: KernelOperator, trace_sq_method: TraceMethod = "exact",
                    standardized: bool = False) -> float:
    """Null variance of ``R`` for independent unit-variance inputs.

    ``tr(K**2)`` for i.i.d. inputs. For sample-standardized inputs the kernel
    acts on contrasts only and the variance is ``tr((HKH)**2)`` with ``H`` the
    centering projector.
    """
    method = resolve_trace_method(k, trace_sq_method)
    tr2 = k.trace_sq(method)
    if not standardized:
        return tr2
    n = k.n
    k1 = k.ones_response()
    s1 = float(k1.sum())
    return tr2 - 2.0 * float(k1 @ k1) / n + s1 * s1 / (n * n)


def r_null_pvalue(r: float, k: KernelOperator, trace_sq_method: TraceMethod = "exact",
                  standardized: bool = False) -> tuple[float, float]:
    """Z-score ``r / sqrt(var)`` and its two-sided normal p-value."""
    var = r_null_variance(k, trace_sq_method, standardized)
    if not var > 0:
        raise ZeroVariance("null variance of R is zero")
    z = float(r / np.sqrt(var))
    return z, pvalue_normal(z, "two_sided")


def all_pairs(n_features: int, include_self: bool = False) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` with ``i < j`` (or ``i <= j``) in lexicographic order."""
    off = 0 if include_self else 1
    return [(i, j) for i in range(n_features) for j in range(i + off, n_features)]


def rtest_block(m: FeatureMatrix, pairs: Iterable[Sequence[int]], k: KernelOperator,
                block_size: int = 256, model: str = "gaussian", dispersion=None,
                trace_sq_method: TraceMethod = "auto",
                standardized: bool = True) -> list[PairResult]:
    """Evaluate ``R`` for many pairs with bounded memory.

    Right-hand features are processed in blocks of ``block_size``; ``K y`` is
    computed once per right-hand feature in a block and reused by every pair
    that needs it. Peak extra memory is ``O(block_size * n)``. Results follow
    the order of ``pairs``.

    With ``standardized=True`` the statistic is compared at
    ``r (n - 1) / (|x| |y|)`` against the contrast-restricted variance, which
    makes the p-value exact in its first two moments for standardized data.
    """
    if block_size < 1:
        raise ValidationError("block_size must be positive")
    if m.n_locations != k.n:
        raise DimensionMismatch("matrix columns do not match the kernel dimension")
    pairs = [(int(a), int(b)) for a, b in pairs]
    f = m.n_features
    for a, b in pairs:
        if not (0 <= a < f and 0 <= b < f):
            raise IndexOutOfRange(f"pair ({a}, {b}) outside 0..{f - 1}")
    needed = sorted({x for p in pairs for x in p})
    z: dict[int, np.ndarray] = {}
    bad: dict[int, str] = {}
    for i in needed:
        try:
            z[i] = standardize(m.values[i], model, dispersion).z
        except QuadTestError as exc:
            bad[i] = type(exc).__name__
    var = r_null_variance(k, trace_sq_method, standardized) if pairs else 0.0
    n = k.n

    by_right: dict[int, list[int]] = {}
    for idx, (a, b) in enumerate(pairs):
        by_right.setdefault(b, []).append(idx)
    rights = [b for b in sorted(by_right) if b not in bad]
    r_vals = np.full(len(pairs), np.nan)
    for start in range(0, len(rights), block_size):
        block = rights[start:start + block_size]
        ky = k.matvec(np.column_stack([z[b] for b in block]))
        for col, b in enumerate(block):
            for idx in by_right[b]:
                a = pairs[idx][0]
                if a not in bad:
                    r_vals[idx] = float(z[a] @ ky[:, col])

    out = []
    for idx, (a, b) in enumerate(pairs):
        fa, fb = m.feature_ids[a], m.feature_ids[b]
        flag = bad.get(a) or bad.get(b)
        if flag:
            out.append(PairResult(fa, fb, float("nan"), float("nan"), 1.0, flag))
            continue
        r = float(r_vals[idx])
        r_eff = r * (n - 1) / np.sqrt(float(z[a] @ z[a]) * float(z[b] @ z[b])) if standardized else r
        if not var > 0:
            out.append(PairResult(fa, fb, r, float("nan"), 1.0, "ZeroVariance"))
            continue
        zs = float(r_eff / np.sqrt(var))
        out.append(PairResult(fa, fb, r, zs, pvalue_normal(zs, "two_sided")))
    return out
