"""Gaussian-mixture decoding of compressively measured patches.

Hard-assignment MAP-EM: the E-step scores each patch's measurement under
every mixture component in the measured domain, assigns the best
component, and reconstructs the patch with that component's linear MAP
decoder; the M-step refits component parameters from the current
reconstructions. Component selection maximizes

    log w_k + log N(y; Phi mu_k, Phi Sigma_k Phi^T + tau I)

with a small relative jitter tau keeping measured covariances positive
definite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .decoder import SingularGramError, map_decode
from .gaussian_model import (
    SpectralGaussian,
    eigh_descending,
    fit_gaussian,
    power_decay_spectrum,
)
from .rng import SeededRng
from .sensing import SensingMatrix, dct2_basis

EVIDENCE_JITTER_REL = 1e-8
INIT_TOP_EIGENVALUE = 4000.0
MONOTONE_SLACK = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


class EvidenceError(RuntimeError):
    """Measured-domain covariance is not positive definite after jitter."""


@dataclass(frozen=True)
class PatchMeasurement:
    """One patch's compressive measurement y = Phi x."""

    y: np.ndarray
    phi: SensingMatrix
    patch_index: int

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        if y.shape != (self.phi.rows,):
            raise ValueError(
                f"y must have shape ({self.phi.rows},), got {y.shape}"
            )
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class GmmModel:
    """Weighted mixture of SpectralGaussian components over patch vectors."""

    components: tuple[SpectralGaussian, ...]
    weights: np.ndarray
    patch_dim: int

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (len(comps),):
            raise ValueError("weights length must match component count")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(math.fsum(weights.tolist()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        for c in comps:
            if c.dim != self.patch_dim:
                raise ValueError("component dimension mismatch")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.components)

    def prior_mean(self) -> np.ndarray:
        return self.weights @ np.stack([c.mean for c in self.components])

    def to_json_dict(self) -> dict:
        return {
            "patch_dim": self.patch_dim,
            "weights": [float(w) for w in self.weights],
            "components": [c.to_json_dict() for c in self.components],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "GmmModel":
        return cls(
            components=tuple(
                SpectralGaussian.from_json_dict(c) for c in data["components"]
            ),
            weights=np.asarray(data["weights"], dtype=float),
            patch_dim=int(data["patch_dim"]),
        )


def save_gmm(model: GmmModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json_dict(), fh, sort_keys=True)


def load_gmm(path) -> GmmModel:
    with open(path, "r", encoding="utf-8") as fh:
        return GmmModel.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class EmIteration:
    iteration: int
    total_log_posterior: float
    assignment_change_count: int
    flagged_patch_count: int


@dataclass(frozen=True)
class EmTrace:
    iterations: tuple[EmIteration, ...]

    def is_monotone(self, slack: float = 1e-6) -> bool:
        values = [it.total_log_posterior for it in self.iterations]
        return all(b >= a - slack for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class EStepResult:
    assignments: np.ndarray
    estimates: np.ndarray
    total_log_posterior: float
    flagged: np.ndarray


def _directional_basis(theta_deg: float, patch_side: int) -> np.ndarray:
    """Eigenbasis of synthetic edge patterns oriented at theta.

    Patterns are step and smoothed-step profiles of the signed distance
    across the orientation, evaluated on the patch grid; their principal
    components order directional structure from smooth to sharp.
    """
    theta = math.radians(theta_deg)
    center = (patch_side - 1) / 2.0
    rows, cols = np.indices((patch_side, patch_side))
    u = (
        -(cols - center) * math.sin(theta) + (rows - center) * math.cos(theta)
    ).reshape(-1)
    limit = center * math.sqrt(2.0) + 0.5
    offsets = np.linspace(-limit, limit, 33)[:, None]
    patterns = np.vstack(
        [
            (u[None, :] >= offsets).astype(float),
            np.tanh((u[None, :] - offsets) / 0.6),
            np.tanh((u[None, :] - offsets) / 1.8),
        ]
    )
    patterns = patterns - patterns.mean(axis=0)
    cov = patterns.T @ patterns / patterns.shape[0]
    _, basis = eigh_descending(cov)
    return basis


def init_directional(
    n_components: int, patch_side: int, decay_alpha: float
) -> GmmModel:
    """Directional-PCA mixture initialization.

    n_components - 1 components are built from oriented synthetic edge
    patterns at evenly spaced angles over [0, 180) degrees; the last is an
    isotropic DC-dominant component for flat patches. Every component gets
    a power-decay eigenvalue profile and zero mean; weights are uniform.
    """
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if patch_side < 1:
        raise ValueError("patch_side must be >= 1")
    n = patch_side * patch_side
    lam = INIT_TOP_EIGENVALUE * power_decay_spectrum(n, decay_alpha).eigenvalues
    mean = np.zeros(n)
    comps = []
    for i in range(n_components - 1):
        angle = 180.0 * i / (n_components - 1)
        comps.append(
            SpectralGaussian(
                dim=n,
                mean=mean,
                basis=_directional_basis(angle, patch_side),
                eigenvalues=lam,
            )
        )
    comps.append(
        SpectralGaussian(
            dim=n, mean=mean, basis=dct2_basis(patch_side).entries, eigenvalues=lam
        )
    )
    weights = np.full(n_components, 1.0 / n_components)
    return GmmModel(components=tuple(comps), weights=weights, patch_dim=n)


def component_log_evidence(
    y: np.ndarray, phi: SensingMatrix, component: SpectralGaussian, weight: float
) -> float:
    """log w + log N(y; Phi mu, Phi Sigma Phi^T + tau I), with relative
    jitter tau = 1e-8 trace/M. Zero weight scores -inf."""
    y = np.asarray(y, dtype=float)
    if phi.cols != component.dim or y.shape != (phi.rows,):
        raise ValueError("dimension mismatch between y, phi, and component")
    if weight < 0:
        raise ValueError("weight must be non-negative")
    if weight == 0.0:
        return -math.inf
    gram = phi.entries @ component.covariance @ phi.entries.T
    gram = 0.5 * (gram + gram.T)
    m = phi.rows
    tau = EVIDENCE_JITTER_REL * float(np.trace(gram)) / m
    gram = gram + tau * np.eye(m)
    try:
        factor = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise EvidenceError("measured covariance not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    r = y - phi.entries @ component.mean
    quad = float(r @ cho_solve(factor, r))
    return math.log(weight) - 0.5 * (m * _LOG_2PI + logdet + quad)


def _evidence_batch(
    component: SpectralGaussian,
    weight: float,
    phis: np.ndarray,
    ys: np.ndarray,
) -> np.ndarray:
    """Vectorized component_log_evidence over stacked equal-size
    measurements; failed patches score -inf."""
    p, m, _ = phis.shape
    if weight <= 0.0:
        return np.full(p, -np.inf)
    ps = phis @ component.covariance
    gram = ps @ phis.transpose(0, 2, 1)
    gram = 0.5 * (gram + gram.transpose(0, 2, 1))
    tau = EVIDENCE_JITTER_REL * np.trace(gram, axis1=1, axis2=2) / m
    gram = gram + tau[:, None, None] * np.eye(m)
    r = ys - phis @ component.mean
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        out = np.full(p, -np.inf)
        for i in range(p):
            try:
                chol_i = np.linalg.cholesky(gram[i])
            except np.linalg.LinAlgError:
                continue
            logdet_i = 2.0 * float(np.sum(np.log(np.diag(chol_i))))
            quad_i = float(r[i] @ np.linalg.solve(gram[i], r[i]))
            out[i] = math.log(weight) - 0.5 * (m * _LOG_2PI + logdet_i + quad_i)
        return out
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    w = np.linalg.solve(gram, r[..., None])[..., 0]
    quad = np.einsum("pm,pm->p", r, w)
    return math.log(weight) - 0.5 * (m * _LOG_2PI + logdet + quad)


def _group_by_rows(measurements) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, meas in enumerate(measurements):
        groups.setdefault(meas.phi.rows, []).append(i)
    return groups


def e_step(gmm: GmmModel, measurements) -> EStepResult:
    """Assign each patch to its best-evidence component and decode it.

    Ties break toward the lowest component index. Patches on which every
    component fails numerically are flagged and get the weighted prior
    mean; flagged patches do not contribute to the total log posterior.
    """
    if not measurements:
        raise ValueError("measurements must be non-empty")
    n = gmm.patch_dim
    for meas in measurements:
        if meas.phi.cols != n:
            raise ValueError("measurement dimension does not match mixture")
    count = len(measurements)
    evidence = np.full((count, len(gmm)), -np.inf)
    for rows, idxs in _group_by_rows(measurements).items():
        phis = np.stack([measurements[i].phi.entries for i in idxs])
        ys = np.stack([measurements[i].y for i in idxs])
        for k, component in enumerate(gmm.components):
            evidence[idxs, k] = _evidence_batch(
                component, float(gmm.weights[k]), phis, ys
            )
    flagged = ~np.any(np.isfinite(evidence), axis=1)
    assignments = np.argmax(evidence, axis=1)
    assignments[flagged] = 0
    prior_mean = gmm.prior_mean()
    estimates = np.empty((count, n))
    for i, meas in enumerate(measurements):
        if flagged[i]:
            estimates[i] = prior_mean
            continue
        try:
            estimates[i] = map_decode(
                gmm.components[assignments[i]], meas.phi, meas.y
            ).estimate
        except SingularGramError:
            flagged[i] = True
            estimates[i] = prior_mean
    best = evidence[np.arange(count), assignments]
    total = math.fsum(float(v) for v, bad in zip(best, flagged) if not bad)
    return EStepResult(
        assignments=assignments,
        estimates=estimates,
        total_log_posterior=total,
        flagged=flagged,
    )


def m_step(
    estimates: np.ndarray,
    assignments: np.ndarray,
    previous: GmmModel,
    regularization: float,
) -> GmmModel:
    """Refit component parameters from assigned reconstructions.

    Weights become assignment fractions. A component with fewer than
    patch_dim / 2 assigned patches keeps its previous mean and covariance
    (too few samples for a usable fit); its weight still updates.
    """
    estimates = np.asarray(estimates, dtype=float)
    if estimates.ndim != 2 or estimates.shape[0] == 0:
        raise ValueError("estimates must be a non-empty 2-D array")
    k_count = len(previous)
    counts = np.bincount(assignments, minlength=k_count)
    weights = counts / estimates.shape[0]
    comps = []
    for k in range(k_count):
        if counts[k] < previous.patch_dim / 2:
            comps.append(previous.components[k])
        else:
            comps.append(
                fit_gaussian(estimates[assignments == k], regularization)
            )
    return GmmModel(
        components=tuple(comps), weights=weights, patch_dim=previous.patch_dim
    )


REGULARIZATION_SCALE = 3e-4


def default_regularization(measurements) -> float:
    """Covariance regularization from the measured dynamic range:
    3e-4 * range^2, floored for degenerate all-constant data.

    Refits use reconstructed patches, whose unmeasured directions are
    shrunk toward the prior; a floor well above rank-collapse scale keeps
    the refit covariances from going overconfident there.
    """
    lo = min(float(np.min(m.y)) for m in measurements)
    hi = max(float(np.max(m.y)) for m in measurements)
    return max(REGULARIZATION_SCALE * (hi - lo) ** 2, 1e-12)


def map_em_decode(
    measurements,
    n_components: int,
    max_iters: int = 5,
    regularization: float | None = None,
    rng: SeededRng | None = None,
    decay_alpha: float = 3.0,
):
    """Piecewise linear decoding by alternating component selection +
    MAP reconstruction (E) with Gaussian parameter refits (M).

    Starts from the directional-PCA initialization and stops at max_iters,
    when no assignment changes, or when a parameter refit would reduce the
    measured-data log posterior (the refit is then discarded and the last
    accepted state returned, so the trace is non-decreasing). Returns
    (estimates, assignments, model, trace); the model is the one that
    produced the final estimates. The rng argument is accepted for
    interface stability; the current initialization is deterministic and
    does not consume it.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not measurements:
        raise ValueError("measurements must be non-empty")
    n = measurements[0].phi.cols
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError("patch dimension must be a perfect square")
    if regularization is None:
        regularization = default_regularization(measurements)
    model = init_directional(n_components, side, decay_alpha)
    accepted_model = model
    records = []
    result = None
    for iteration in range(1, max_iters + 1):
        candidate = e_step(model, measurements)
        if (
            result is not None
            and candidate.total_log_posterior
            < result.total_log_posterior - MONOTONE_SLACK
        ):
            model = accepted_model
            break
        if result is None:
            changes = len(measurements)
        else:
            changes = int(np.sum(candidate.assignments != result.assignments))
        accepted_model = model
        result = candidate
        records.append(
            EmIteration(
                iteration=iteration,
                total_log_posterior=result.total_log_posterior,
                assignment_change_count=changes,
                flagged_patch_count=int(np.sum(result.flagged)),
            )
        )
        if changes == 0 or iteration == max_iters:
            break
        model = m_step(result.estimates, result.assignments, model, regularization)
    trace = EmTrace(iterations=tuple(records))
    return result.estimates, result.assignments, accepted_model, trace
