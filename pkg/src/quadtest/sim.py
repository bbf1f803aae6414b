"""Synthetic spatial patterns, noisy negative binomial counts and null data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import FeatureMatrix
from .errors import BadParams, BadSpec
from .kernel import KernelOperator
from .spectra import invisible_pattern

KINDS = ("constant", "low_freq_blob", "cosine_mode", "checkerboard",
         "cancellation_composite", "custom")


@dataclass(frozen=True)
class PatternSpec:
    """Description of a deterministic spatial pattern.

    Parameters
    ----------
    kind : str
        One of ``constant``, ``low_freq_blob``, ``cosine_mode``,
        ``checkerboard``, ``cancellation_composite``, ``custom``.
    amplitude : float
        Multiplier applied to the unit pattern.
    center, radius
        Blob center ``(row, col)`` and Gaussian radius, in lattice units.
    freq
        ``(row_freq, col_freq)`` for a cosine mode.
    kernel
        Kernel whose cancellation pattern is requested.
    vector
        Values for ``custom``.
    """

    kind: str
    amplitude: float = 1.0
    center: Optional[tuple] = None
    radius: Optional[float] = None
    freq: Optional[tuple] = None
    kernel: Optional[KernelOperator] = None
    vector: Optional[Sequence[float]] = None


def generate_pattern(spec: PatternSpec, dims: tuple[int, int]) -> np.ndarray:
    """Row-major pattern of length ``rows * cols``."""
    rows, cols = int(dims[0]), int(dims[1])
    if rows < 1 or cols < 1:
        raise BadSpec("dims must be positive")
    n = rows * cols
    r, c = np.divmod(np.arange(n), cols)
    kind = spec.kind
    if kind == "constant":
        x = np.ones(n)
    elif kind == "low_freq_blob":
        if spec.radius is None or not spec.radius > 0:
            raise BadSpec("low_freq_blob needs a positive radius")
        cr, cc = spec.center if spec.center is not None else ((rows - 1) / 2, (cols - 1) / 2)
        x = np.exp(-((r - cr) ** 2 + (c - cc) ** 2) / (2.0 * spec.radius ** 2))
    elif kind == "cosine_mode":
        if spec.freq is None or len(spec.freq) != 2:
            raise BadSpec("cosine_mode needs freq = (row_freq, col_freq)")
        fr, fc = spec.freq
        x = np.cos(2 * np.pi * (fr * r / rows + fc * c / cols))
    elif kind == "checkerboard":
        x = np.where((r + c) % 2 == 0, 1.0, -1.0)
    elif kind == "cancellation_composite":
        if spec.kernel is None or spec.kernel.n != n:
            raise BadSpec("cancellation_composite needs a kernel of matching size")
        x = invisible_pattern(spec.kernel, "cancellation")
        if x is None:
            raise BadSpec("kernel has no cancellation pattern")
    elif kind == "custom":
        if spec.vector is None or len(spec.vector) != n:
            raise BadSpec("custom pattern must have rows * cols values")
        x = np.asarray(spec.vector, dtype=float)
    else:
        raise BadSpec(f"kind must be one of {KINDS}")
    return spec.amplitude * x


def _nb_draw(rng: np.random.Generator, mu: np.ndarray, dispersion: float) -> np.ndarray:
    # variance mu + dispersion * mu**2
    size = 1.0 / dispersion
    return rng.negative_binomial(size, size / (size + mu)).astype(float)


def nb_counts(pattern: Sequence[float], mean_expr: float, dispersion: float,
              noise_level: float, seed=0, gain: float = 1.0) -> np.ndarray:
    """Negative binomial counts driven by a pattern corrupted with noise.

    The per-location mean is ``mean_expr * exp(gain * ((1 - l) p + l e))``
    where ``p`` is the pattern rescaled to zero mean and unit variance, ``e``
    is standard normal white noise and ``l = noise_level``. Counts have
    variance ``mu + dispersion * mu**2``.
    """
    if not mean_expr > 0 or not dispersion > 0:
        raise BadParams("mean_expr and dispersion must be positive")
    if not 0 <= noise_level <= 1:
        raise BadParams("noise_level must lie in [0, 1]")
    p = np.asarray(pattern, dtype=float)
    sd = p.std()
    p = (p - p.mean()) / sd if sd > 0 else np.zeros_like(p)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(p.size)
    mu = mean_expr * np.exp(gain * ((1.0 - noise_level) * p + noise_level * eps))
    return _nb_draw(rng, mu, dispersion)


@dataclass(frozen=True)
class NBDist:
    mean: float
    dispersion: float


def null_features(n_features: int, n_locations: int,
                  dist: Union[str, NBDist] = "gaussian", seed=0) -> FeatureMatrix:
    """Independent features with i.i.d. entries.

    Each feature draws from its own generator seeded by ``(seed, index)`` so
    results do not depend on how work is split.
    """
    if n_features < 0 or n_locations < 2:
        raise BadParams("need n_features >= 0 and n_locations >= 2")
    if not (dist == "gaussian" or isinstance(dist, NBDist)):
        raise BadParams("dist must be 'gaussian' or NBDist")
    if isinstance(dist, NBDist) and not (dist.mean > 0 and dist.dispersion > 0):
        raise BadParams("NB mean and dispersion must be positive")
    out = np.empty((n_features, n_locations))
    for i in range(n_features):
        rng = np.random.default_rng([seed, i])
        if dist == "gaussian":
            out[i] = rng.standard_normal(n_locations)
        else:
            out[i] = _nb_draw(rng, np.full(n_locations, dist.mean), dist.dispersion)
    return FeatureMatrix(out, counts_flag=isinstance(dist, NBDist))
