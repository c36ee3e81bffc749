"""Optimal linear decoding of Gaussian signals from linear measurements.

For x ~ N(mu, S) and y = Phi x, the MAP (and MMSE) estimate is

    x_hat = mu + S Phi^T (Phi S Phi^T)^{-1} (y - Phi mu)

and the error covariance is S - S Phi^T (Phi S Phi^T)^{-1} Phi S, whose
trace is the exact mean squared error. All solves go through a symmetric
factorization of the M x M Gram; the Gram is never inverted explicitly.

Conditioning policy: the Gram is factored as-is when its condition number
is acceptable; a relative jitter tau = 1e-10 * trace/M is added only when
the plain system exceeds the condition limit. This keeps exactly
determined cases (invertible Phi) exact to machine precision while
rescuing marginal power-decay spectra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .gaussian_model import SpectralGaussian
from .sensing import SensingMatrix, subsample_columns

CONDITION_LIMIT = 1e14
JITTER_REL = 1e-10


class SingularGramError(RuntimeError):
    """Phi S Phi^T is numerically singular even after jitter."""

    def __init__(self, condition: float):
        self.condition = float(condition)
        super().__init__(
            f"measurement Gram is numerically singular (condition {condition:.3e})"
        )


@dataclass(frozen=True)
class DecodeResult:
    """Reconstruction plus the Gram condition number diagnostic."""

    estimate: np.ndarray
    gram_condition: float


def _check_pair(model: SpectralGaussian, phi: SensingMatrix) -> None:
    if phi.cols != model.dim:
        raise ValueError(
            f"dimension mismatch: matrix has {phi.cols} cols, model dim {model.dim}"
        )


def _gram_system(model: SpectralGaussian, phi: SensingMatrix):
    """Factor Phi S Phi^T per the conditioning policy.

    Returns (phi_s, factor, condition) with phi_s = Phi S and condition
    the Gram's condition number before any jitter.
    """
    phi_s = phi.entries @ model.covariance
    gram = phi_s @ phi.entries.T
    gram = 0.5 * (gram + gram.T)
    m = phi.rows
    eigs = np.linalg.eigvalsh(gram)
    emin, emax = float(eigs[0]), float(eigs[-1])
    condition = math.inf if emin <= 0 else emax / emin
    if condition > CONDITION_LIMIT:
        tau = JITTER_REL * float(np.trace(gram)) / m
        shifted_min, shifted_max = emin + tau, emax + tau
        shifted_cond = math.inf if shifted_min <= 0 else shifted_max / shifted_min
        if shifted_cond > CONDITION_LIMIT:
            raise SingularGramError(shifted_cond)
        gram = gram + tau * np.eye(m)
    try:
        factor = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(condition) from exc
    return phi_s, factor, condition


def map_decode(model: SpectralGaussian, phi: SensingMatrix, y: np.ndarray) -> DecodeResult:
    """MAP/MMSE reconstruction of a signal from y = Phi x.

    A square subsampling matrix is a permutation, so the decode reduces to
    scattering y back; that path is exact (no solve, no jitter).
    """
    _check_pair(model, phi)
    y = np.asarray(y, dtype=float)
    if y.shape != (phi.rows,):
        raise ValueError(f"y must have shape ({phi.rows},), got {y.shape}")
    if phi.kind == "subsample" and phi.rows == phi.cols:
        estimate = np.empty(phi.cols)
        estimate[subsample_columns(phi)] = y
        gram = phi.entries @ model.covariance @ phi.entries.T
        eigs = np.linalg.eigvalsh(0.5 * (gram + gram.T))
        cond = math.inf if eigs[0] <= 0 else float(eigs[-1] / eigs[0])
        return DecodeResult(estimate=estimate, gram_condition=cond)
    phi_s, factor, condition = _gram_system(model, phi)
    w = cho_solve(factor, y - phi.entries @ model.mean)
    return DecodeResult(estimate=model.mean + phi_s.T @ w, gram_condition=condition)


def map_decode_batch(
    model: SpectralGaussian, phi: SensingMatrix, ys: np.ndarray
) -> np.ndarray:
    """Decode many measurements of one (model, matrix) pair at once.

    ``ys`` has one measurement per row; returns one estimate per row.
    Same solve path as map_decode, factored once.
    """
    _check_pair(model, phi)
    ys = np.asarray(ys, dtype=float)
    if ys.ndim != 2 or ys.shape[1] != phi.rows:
        raise ValueError(f"ys must have shape (count, {phi.rows})")
    phi_s, factor, _ = _gram_system(model, phi)
    residuals = ys - phi.entries @ model.mean
    w = cho_solve(factor, residuals.T)
    return model.mean + (phi_s.T @ w).T


def error_covariance(model: SpectralGaussian, phi: SensingMatrix) -> np.ndarray:
    """Covariance of the decoding error, S - S Phi^T (Phi S Phi^T)^{-1} Phi S."""
    _check_pair(model, phi)
    phi_s, factor, _ = _gram_system(model, phi)
    w = cho_solve(factor, phi_s)
    cov = model.covariance - phi_s.T @ w
    return 0.5 * (cov + cov.T)


def mse_closed_form(model: SpectralGaussian, phi: SensingMatrix) -> float:
    """Exact MSE of the MAP decoder: trace of the error covariance."""
    _check_pair(model, phi)
    phi_s, factor, _ = _gram_system(model, phi)
    w = cho_solve(factor, phi_s)
    return float(np.trace(model.covariance) - np.sum(phi_s * w))
