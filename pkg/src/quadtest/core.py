"""Shared data types, standardization and multiple-testing adjustment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConstantInput,
    DimensionMismatch,
    NegativeCount,
    NonPositiveDispersion,
    OutOfRange,
    ValidationError,
)

MODELS = ("gaussian", "poisson", "negbin")
BOUNDARIES = ("open", "torus")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice with unit spacing, enumerated row-major."""

    rows: int
    cols: int
    boundary: str = "torus"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("grid dimensions must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValidationError(f"boundary must be one of {BOUNDARIES}")

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)


@dataclass(frozen=True)
class SpatialLocations:
    """Coordinates of ``n`` locations in 1, 2 or 3 dimensions.

    Parameters
    ----------
    points : ndarray, shape (n, d)
        Coordinates. Row order defines the location order everywhere.
    grid : GridSpec, optional
        Set when the points enumerate a regular lattice row-major.
    ids : tuple of str, optional
        Location identifiers; defaults to ``"0", "1", ...``.
    """

    points: np.ndarray
    grid: Optional[GridSpec] = None
    ids: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] not in (1, 2, 3):
            raise ValidationError("points must have shape (n, d) with d in {1, 2, 3}")
        if pts.shape[0] < 2:
            raise ValidationError("at least two locations are required")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("coordinates must be finite")
        if self.grid is not None and self.grid.n != pts.shape[0]:
            raise ValidationError("grid size does not match the number of points")
        ids = self.ids
        if ids is None:
            ids = tuple(str(i) for i in range(pts.shape[0]))
        else:
            ids = tuple(str(i) for i in ids)
            if len(ids) != pts.shape[0]:
                raise ValidationError("one id per location is required")
        object.__setattr__(self, "points", _frozen(pts.copy()))
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_grid(cls, rows: int, cols: int, boundary: str = "torus") -> "SpatialLocations":
        """Lattice points ``(row, col)`` enumerated row-major."""
        g = GridSpec(rows, cols, boundary)
        r, c = np.divmod(np.arange(g.n), cols)
        return cls(np.column_stack([r, c]).astype(float), grid=g)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class FeatureMatrix:
    """Features in rows, locations in columns."""

    values: np.ndarray
    feature_ids: Optional[tuple] = None
    counts_flag: Optional[bool] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, ndmin=2)
        if v.ndim != 2:
            raise ValidationError("values must be a 2-D array")
        ids = self.feature_ids
        if ids is None:
            ids = tuple(f"f{i}" for i in range(v.shape[0]))
        else:
            ids = tuple(str(i) for i in ids)
            if len(ids) != v.shape[0]:
                raise ValidationError("one id per feature is required")
        is_counts = bool(np.all(v >= 0) and np.all(v == np.round(v)))
        flag = is_counts if self.counts_flag is None else bool(self.counts_flag)
        if flag and not is_counts:
            raise ValidationError("counts_flag set but entries are not non-negative integers")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "feature_ids", ids)
        object.__setattr__(self, "counts_flag", flag)

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_locations(self) -> int:
        return self.values.shape[1]

    def check_locations(self, locs: SpatialLocations) -> None:
        if self.n_locations != locs.n:
            raise DimensionMismatch(
                f"matrix has {self.n_locations} columns but there are {locs.n} locations"
            )


@dataclass(frozen=True)
class StandardizedVector:
    """Standardized observations ``z = (x - mu_hat) / scale``."""

    z: np.ndarray
    mu_hat: float
    scale: float
    model: str = "gaussian"
    dispersion: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen(np.asarray(self.z, dtype=float)))

    @property
    def n(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class NullMoments:
    """Null mean and variance of a quadratic statistic.

    ``standardized`` marks moments that account for sample centering and
    scaling (see :func:`quadtest.qtest.null_moments`); ``dof`` is the number of
    degrees of freedom left after centering (``n - 1``).
    """

    mean: float
    variance: float
    kurtosis_mu4: float = 3.0
    standardized: bool = False
    dof: Optional[int] = None


@dataclass(frozen=True)
class TestResult:
    """Outcome of testing one feature."""

    __test__ = False  # not a pytest class

    feature_id: str
    q: float
    z_score: float
    p_value: float
    p_adjusted: Optional[float] = None
    method: str = "welch"
    kernel_name: str = ""
    flag: Optional[str] = None


def standardize(x: Sequence[float], model: str = "gaussian",
                dispersion: Optional[float] = None) -> StandardizedVector:
    """Center and scale one feature.

    Parameters
    ----------
    x : array_like, shape (n,)
        Observations at ``n`` locations.
    model : {"gaussian", "poisson", "negbin"}
        Variance model. ``gaussian`` divides by the sample standard deviation
        (``ddof=1``). The count models divide by the model standard deviation
        of the working variable, ``v0`` with ``v0**2 = 1 / xbar`` (poisson) or
        ``v0**2 = 1 / (xbar + xbar**2 / r)`` (negbin), which scales the
        statistic by the expression level.
    dispersion : float, optional
        Negative binomial size ``r``; required for ``negbin``.

    Returns
    -------
    StandardizedVector
        With ``z`` re-centered to an exact zero mean.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ValidationError("x must be a vector with at least two entries")
    if model not in MODELS:
        raise ValidationError(f"model must be one of {MODELS}")
    mu = float(x.mean())
    if model != "gaussian" and np.any(x < 0):
        raise NegativeCount("count models require non-negative observations")
    if model == "negbin" and (dispersion is None or not dispersion > 0):
        raise NonPositiveDispersion("negbin requires dispersion r > 0")
    sd = float(x.std(ddof=1))
    if not sd > 0:
        raise ConstantInput("feature has zero sample variance")
    if model == "gaussian":
        scale = sd
    elif model == "poisson":
        scale = float(np.sqrt(1.0 / mu))
    else:
        scale = float(np.sqrt(1.0 / (mu + mu * mu / dispersion)))
    z = (x - mu) / scale
    z -= z.mean()
    return StandardizedVector(z, mu, scale, model, dispersion if model == "negbin" else None)


def bh_adjust(p: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values in input order.

    Ties are ordered by a stable sort on index.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValidationError("p must be a vector")
    if np.any(~(p >= 0) | ~(p <= 1)):
        raise OutOfRange("p-values must lie in [0, 1]")
    m = p.shape[0]
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(ranked, 1.0)
    return out


__all__ = [
    "GridSpec", "SpatialLocations", "FeatureMatrix", "StandardizedVector",
    "NullMoments", "TestResult", "standardize", "bh_adjust",
]
