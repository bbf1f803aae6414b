"""Kernel spectra, definiteness classes and patterns a kernel cannot see."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BackendMismatch, NotCentered, TooLarge, ValidationError
from .kernel import DENSE_CAP, CarKernel, DenseKernel, GridKernel, KernelOperator

CLASSES = ("strictly_positive", "strictly_negative", "psd_with_blind_spots", "indefinite")


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted in descending order.

    Attributes
    ----------
    eigenvalues : ndarray
    eigenvectors : ndarray or None
        Orthonormal columns matching ``eigenvalues``.
    source : {"dense_exact", "grid_fft"}
    centered : bool
        True when the constant mode has been removed, leaving ``n - 1`` values.
    """

    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None
    source: str = "dense_exact"
    centered: bool = False

    def __len__(self) -> int:
        return int(self.eigenvalues.size)


@dataclass(frozen=True)
class DefinitenessReport:
    kind: str
    n_positive: int
    n_negative: int
    n_zero: int
    tol: float


def _householder(n: int) -> np.ndarray:
    """Unit vector ``u`` whose reflector maps ``e_0`` to ``1 / sqrt(n)``."""
    u = np.full(n, 1.0 / np.sqrt(n))
    u[0] -= 1.0
    return u / np.linalg.norm(u)


def _restrict_to_contrasts(a: np.ndarray):
    """Matrix of ``a`` on the orthogonal complement of the constant vector.

    Returns the ``(n-1, n-1)`` block and the reflector vector used.
    """
    n = a.shape[0]
    u = _householder(n)
    au = a @ u
    uau = u @ au
    pap = a - 2.0 * np.outer(u, au) - 2.0 * np.outer(au, u) + 4.0 * uau * np.outer(u, u)
    return pap[1:, 1:], u


def dense_spectrum(k: KernelOperator, centered: bool = False, cap: int = DENSE_CAP,
                   eigenvectors: bool = True) -> Spectrum:
    """Full symmetric eigendecomposition of a materialized kernel.

    With ``centered=True`` the kernel is restricted to vectors orthogonal to
    the constant vector, which is the spectrum of ``H K H`` without the zero
    belonging to the constant mode.
    """
    if isinstance(k, CarKernel):
        raise BackendMismatch("implicit kernels have no dense spectrum; materialize first")
    if k.n > cap:
        raise TooLarge(f"n={k.n} exceeds the dense spectrum cap {cap}")
    a = k.to_dense()
    if centered:
        b, u = _restrict_to_contrasts(a)
        if eigenvectors:
            lam, v = np.linalg.eigh(b)
            full = np.vstack([np.zeros((1, v.shape[1])), v])
            vec = full - 2.0 * np.outer(u, u @ full)
        else:
            lam, vec = np.linalg.eigvalsh(b), None
    elif eigenvectors:
        lam, vec = np.linalg.eigh(a)
    else:
        lam, vec = np.linalg.eigvalsh(a), None
    order = np.argsort(-lam, kind="stable")
    return Spectrum(lam[order], None if vec is None else vec[:, order], "dense_exact", centered)


def grid_spectrum(k: KernelOperator, centered: bool = False) -> Spectrum:
    """Eigenvalues of an FFT grid kernel; ``centered`` drops the constant mode."""
    if not isinstance(k, GridKernel):
        raise BackendMismatch("grid_spectrum needs the grid_fft backend")
    lam = k.eigenvalues.ravel()
    if centered:
        lam = lam[1:]
    return Spectrum(np.sort(lam)[::-1].copy(), None, "grid_fft", centered)


def kernel_spectrum(k: KernelOperator, centered: bool = True, cap: int = DENSE_CAP) -> Spectrum:
    """Eigenvalues by the cheapest exact route for the backend."""
    if isinstance(k, GridKernel):
        return grid_spectrum(k, centered)
    if isinstance(k, CarKernel):
        if k.n > cap:
            raise TooLarge(f"n={k.n} exceeds the dense spectrum cap {cap}")
        k = DenseKernel(k.to_dense(), name=k.name, psd=True, check_symmetric=False)
    return dense_spectrum(k, centered, cap, eigenvectors=False)


def classify_definiteness(s: Spectrum, tol: Optional[float] = None) -> DefinitenessReport:
    """Sign pattern of a centered spectrum.

    Spectra with zeros and a single sign, in either direction, are reported as
    ``psd_with_blind_spots``.
    """
    if not s.centered:
        raise NotCentered("classification needs a centered spectrum")
    lam = s.eigenvalues
    if tol is None:
        tol = 1e-8 * (float(np.abs(lam).max()) if lam.size else 0.0)
    pos = int(np.sum(lam > tol))
    neg = int(np.sum(lam < -tol))
    zero = int(lam.size - pos - neg)
    if pos and neg:
        kind = "indefinite"
    elif zero:
        kind = "psd_with_blind_spots"
    elif neg:
        kind = "strictly_negative"
    else:
        kind = "strictly_positive"
    return DefinitenessReport(kind, pos, neg, zero, float(tol))


def invisible_pattern(k: KernelOperator, mode: str = "cancellation",
                      cap: int = DENSE_CAP) -> Optional[np.ndarray]:
    """Non-constant pattern whose centered quadratic form vanishes.

    Parameters
    ----------
    k : KernelOperator
        Materialized densely; must have ``n <= cap``.
    mode : {"blind_spot", "cancellation"}
        ``blind_spot`` returns an eigenvector with a zero eigenvalue.
        ``cancellation`` combines the eigenvectors of the largest positive
        eigenvalue ``lp`` and the most negative eigenvalue ``lq`` as
        ``sqrt(|lq|) phi_p + sqrt(lp) phi_q``.

    Returns
    -------
    ndarray or None
        None when the kernel has no such pathology.
    """
    if mode not in ("blind_spot", "cancellation"):
        raise ValidationError("mode must be 'blind_spot' or 'cancellation'")
    if k.n > cap:
        raise TooLarge(f"n={k.n} exceeds the dense spectrum cap {cap}")
    dk = DenseKernel(k.to_dense(), name=k.name, check_symmetric=False)
    s = dense_spectrum(dk, centered=True, cap=cap)
    lam, vec = s.eigenvalues, s.eigenvectors
    tol = 1e-8 * float(np.abs(lam).max()) if lam.size else 0.0
    if mode == "blind_spot":
        zero = np.nonzero(np.abs(lam) <= tol)[0]
        return vec[:, zero[0]].copy() if zero.size else None
    if not (lam[0] > tol and lam[-1] < -tol):
        return None
    # largest positive is first; most negative is last, ties go to the lowest index
    p = 0
    q = int(np.nonzero(lam == lam[-1])[0][0])
    return np.sqrt(-lam[q]) * vec[:, p] + np.sqrt(lam[p]) * vec[:, q]


def radial_power(pattern: np.ndarray, dims: tuple[int, int]):
    """Mean squared Fourier coefficient per integer radial frequency.

    Parameters
    ----------
    pattern : ndarray, shape (rows * cols,)
        Row-major grid values.
    dims : (rows, cols)

    Returns
    -------
    radius : ndarray of int
        Occupied radius bins ``floor(|omega|)``.
    power : ndarray
        Mean of ``|F(pattern - mean)|**2`` within each bin (orthonormal FFT).
    """
    rows, cols = dims
    x = np.asarray(pattern, dtype=float)
    if x.size != rows * cols:
        raise ValidationError("pattern length does not match dims")
    x = x.reshape(rows, cols) - x.mean()
    f = np.abs(np.fft.fft2(x, norm="ortho")) ** 2
    fr = np.fft.fftfreq(rows) * rows
    fc = np.fft.fftfreq(cols) * cols
    rad = np.floor(np.sqrt(fr[:, None] ** 2 + fc[None, :] ** 2)).astype(int).ravel()
    total = np.bincount(rad, weights=f.ravel())
    count = np.bincount(rad)
    occupied = np.nonzero(count)[0]
    return occupied, total[occupied] / count[occupied]
