"""Gaussian signal models stored in spectral form.

A model keeps its mean, an orthonormal eigenbasis of the covariance, and
the eigenvalues sorted non-increasing, so spectral quantities (tail
energies, whitening, sampling) read directly off the representation. The
covariance is materialized eagerly as ``basis @ diag(eigenvalues) @
basis.T`` because every consumer needs it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import SeededRng

ORTHONORMALITY_TOL = 1e-10
SYMMETRY_TOL = 1e-10
EIGENVALUE_CLAMP_REL = 1e-10


def _locked(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Spectrum:
    """Sorted, non-negative covariance eigenvalues."""

    eigenvalues: np.ndarray

    def __post_init__(self) -> None:
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("spectrum must be a non-empty 1-D array")
        if not np.all(np.isfinite(lam)):
            raise ValueError("spectrum entries must be finite")
        if np.any(lam < 0):
            raise ValueError("spectrum entries must be non-negative")
        if np.any(np.diff(lam) > 0):
            raise ValueError("spectrum must be sorted non-increasing")
        object.__setattr__(self, "eigenvalues", _locked(lam))

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    def to_json_dict(self) -> dict:
        return {"eigenvalues": [float(v) for v in self.eigenvalues]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "Spectrum":
        return cls(np.asarray(data["eigenvalues"], dtype=float))


@dataclass(frozen=True)
class SpectralGaussian:
    """Gaussian model ``N(mean, basis @ diag(eigenvalues) @ basis.T)``.

    ``basis`` columns are covariance eigenvectors; ``eigenvalues`` are
    sorted non-increasing and non-negative. Instances are immutable and
    safe to share across threads.
    """

    dim: int
    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    covariance: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = int(self.dim)
        if n < 1:
            raise ValueError("dim must be positive")
        mean = np.asarray(self.mean, dtype=float)
        basis = np.asarray(self.basis, dtype=float)
        if mean.shape != (n,):
            raise ValueError(f"mean must have shape ({n},), got {mean.shape}")
        if basis.shape != (n, n):
            raise ValueError(f"basis must have shape ({n}, {n}), got {basis.shape}")
        spectrum = Spectrum(self.eigenvalues)
        if spectrum.dim != n:
            raise ValueError("eigenvalues length must equal dim")
        gram_dev = np.max(np.abs(basis.T @ basis - np.eye(n)))
        if gram_dev > ORTHONORMALITY_TOL:
            raise ValueError(
                f"basis columns not orthonormal (max deviation {gram_dev:.3e})"
            )
        lam = spectrum.eigenvalues
        cov = (basis * lam) @ basis.T
        asym = np.max(np.abs(cov - cov.T))
        if asym > SYMMETRY_TOL:
            raise ValueError(f"covariance not symmetric (max asymmetry {asym:.3e})")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "dim", n)
        object.__setattr__(self, "mean", _locked(mean))
        object.__setattr__(self, "basis", _locked(basis))
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "covariance", _locked(cov))

    @property
    def spectrum(self) -> Spectrum:
        return Spectrum(self.eigenvalues)

    @classmethod
    def from_spectrum(
        cls, spectrum: Spectrum, mean: np.ndarray | None = None
    ) -> "SpectralGaussian":
        """Model with the canonical basis: diagonal covariance diag(eigenvalues)."""
        n = spectrum.dim
        if mean is None:
            mean = np.zeros(n)
        return cls(dim=n, mean=mean, basis=np.eye(n), eigenvalues=spectrum.eigenvalues)

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "mean": [float(v) for v in self.mean],
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "basis": [float(v) for v in self.basis.reshape(-1)],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SpectralGaussian":
        n = int(data["dim"])
        return cls(
            dim=n,
            mean=np.asarray(data["mean"], dtype=float),
            basis=np.asarray(data["basis"], dtype=float).reshape(n, n),
            eigenvalues=np.asarray(data["eigenvalues"], dtype=float),
        )


def eigh_descending(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition, eigenvalues sorted non-increasing.

    Tiny negative eigenvalues down to -EIGENVALUE_CLAMP_REL * lambda_max
    are clamped to zero (floating-point asymmetry guard); anything more
    negative raises.
    """
    sym = np.asarray(matrix, dtype=float)
    sym = 0.5 * (sym + sym.T)
    lam, vec = np.linalg.eigh(sym)
    lam = lam[::-1].copy()
    vec = vec[:, ::-1].copy()
    top = max(float(lam[0]), 0.0)
    floor = -EIGENVALUE_CLAMP_REL * top
    if np.any(lam < floor):
        raise ValueError(
            f"matrix has significantly negative eigenvalues (min {lam.min():.3e})"
        )
    np.clip(lam, 0.0, None, out=lam)
    return lam, vec


def power_decay_spectrum(n: int, alpha: float) -> Spectrum:
    """Spectrum with eigenvalues m**(-alpha), m = 1..n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    m = np.arange(1, int(n) + 1, dtype=float)
    return Spectrum(m ** (-float(alpha)))


def best_k_term_mse(spectrum: Spectrum, k: int) -> float:
    """Tail energy sum(eigenvalues[k:]): the oracle error of keeping the
    top-k principal coefficients."""
    if not 0 <= int(k) <= spectrum.dim:
        raise ValueError(f"k must lie in [0, {spectrum.dim}], got {k}")
    return math.fsum(spectrum.eigenvalues[int(k):].tolist())


def sample(model: SpectralGaussian, count: int, rng: SeededRng) -> np.ndarray:
    """Draw ``count`` vectors from the model; returns a (count, dim) array.

    Sample i uses substream ``rng.child(i)``, so a parallel map over
    indices reproduces the serial output bit for bit.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    scale = np.sqrt(model.eigenvalues)
    z = np.empty((count, model.dim))
    for i in range(count):
        z[i] = rng.child(i).generator().standard_normal(model.dim)
    return model.mean + (z * scale) @ model.basis.T


def fit_gaussian(signals, regularization: float = 0.0) -> SpectralGaussian:
    """Fit a SpectralGaussian by sample mean and sample covariance.

    The covariance normalizes by the signal count (not count - 1) and adds
    ``regularization`` times the identity before eigendecomposition.
    """
    x = np.asarray(signals, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError("signals must be a non-empty list of equal-length vectors")
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    count, n = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / count
    if regularization > 0:
        cov = cov + regularization * np.eye(n)
    lam, basis = eigh_descending(cov)
    return SpectralGaussian(dim=n, mean=mean, basis=basis, eigenvalues=lam)
