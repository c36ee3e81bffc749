"""Experiment harness: MSE ratio curves, block-isometry diagnostics, and
null-space/instance-optimality bound constants.

Monte Carlo conventions
-----------------------
Expectations over the signal are evaluated exactly through the error-
covariance trace whenever possible; matrix randomness is averaged over
explicit draws with per-trial substreams (trial t consumes
``rng.child(t)``). Scalar aggregation uses math.fsum so the reduction is
independent of scheduling, which makes threaded and serial runs agree.

Analysis experiments that use subsampling operators compose them with a
DCT basis (kind "subsample-dct"); a raw subsampling matrix is maximally
coherent with the canonical model basis and is only useful for sensing
pixels directly, which the imaging module handles.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .decoder import (
    SingularGramError,
    error_covariance,
    map_decode,
    map_decode_batch,
    mse_closed_form,
)
from .gaussian_model import (
    SpectralGaussian,
    Spectrum,
    best_k_term_mse,
    power_decay_spectrum,
    sample,
)
from .rng import SeededRng
from .sensing import (
    Basis,
    SensingMatrix,
    bernoulli_matrix,
    compose,
    dct2_basis,
    dct_basis,
    gaussian_matrix,
    subsampling_matrix,
)

EXPERIMENT_MATRIX_KINDS = ("gaussian", "bernoulli", "subsample", "subsample-dct")

MAX_EXCLUDED_FRACTION = 0.01


class EstimationError(RuntimeError):
    """Too many trials were excluded for a trustworthy estimate."""


class DegenerateSupportError(RuntimeError):
    """An expected error energy needed as a denominator is zero."""


@dataclass(frozen=True)
class MonteCarloMse:
    """Estimated decoder MSE with its standard error."""

    mse: float
    stderr: float
    trials: int
    excluded: int


@dataclass(frozen=True)
class RatioPoint:
    abscissa: float
    scs_mse: float
    best_k_mse: float
    ratio: float
    stderr: float


@dataclass(frozen=True)
class RatioCurve:
    """Decoder MSE against the top-k oracle across a parameter sweep."""

    abscissa_label: str
    points: tuple[RatioPoint, ...]
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class DecayProfile:
    """Per-coordinate mean absolute decoding error and its decay check."""

    means: np.ndarray
    stderrs: np.ndarray
    monotone: bool
    trials: int
    excluded: int


@dataclass(frozen=True)
class RipExpectationReport:
    """Restricted-energy ratios of decoding errors on the leading block.

    a_k is E||Phi eta_K||^2 / E||eta_K||^2 on K = {first k indices}, b_k
    the same on the complement, and c0 = 1 + b_k / a_k.
    """

    k: int
    a_k: float
    b_k: float
    c0: float
    trials: int
    method: str


@dataclass(frozen=True)
class NullSpaceCheck:
    """Both sides of the expected-error null-space identity."""

    lhs: float
    rhs: float
    a_k: float
    b_k: float
    c0: float
    degenerate: bool


@lru_cache(maxsize=8)
def _synthesis_dct(n: int) -> Basis:
    """Coefficient-to-sample DCT for the subsample-dct composition.

    Square dimensions get the 2-D separable DCT over patches (the model
    spectrum orders 2-D frequencies); otherwise the transposed 1-D DCT-II.
    """
    side = math.isqrt(n)
    if side * side == n:
        return dct2_basis(side)
    return Basis(dim=n, entries=dct_basis(n).entries.T, kind="dct")


def draw_matrix(kind: str, m: int, n: int, rng: SeededRng) -> SensingMatrix:
    """Draw one sensing matrix of the requested experiment kind.

    "subsample-dct" is random sample-domain subsampling composed with the
    synthesis DCT, the form in which subsampling operators are useful
    against a sorted-coefficient model.
    """
    if kind == "gaussian":
        return gaussian_matrix(m, n, rng)
    if kind == "bernoulli":
        return bernoulli_matrix(m, n, rng)
    if kind == "subsample":
        return subsampling_matrix(m, n, rng)
    if kind == "subsample-dct":
        return compose(subsampling_matrix(m, n, rng), _synthesis_dct(n))
    raise ValueError(
        f"unknown matrix kind {kind!r}; expected one of {EXPERIMENT_MATRIX_KINDS}"
    )


def _resolve_matrix(matrix, m: int, n: int, rng: SeededRng) -> SensingMatrix:
    if isinstance(matrix, SensingMatrix):
        if matrix.cols != n or matrix.rows != m:
            raise ValueError("fixed matrix shape does not match (m, n)")
        return matrix
    return draw_matrix(matrix, m, n, rng)


def _run_trials(fn, trials: int, threads: int) -> list:
    """Evaluate fn(0..trials-1), collecting results in index order.

    Results are reduced in index order afterwards, so any thread count
    produces identical output.
    """
    if threads <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def _mean_stderr(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def monte_carlo_mse(
    model: SpectralGaussian,
    matrix,
    m: int,
    trials: int,
    rng: SeededRng,
    fresh_matrix_per_signal: bool = True,
    threads: int = 1,
) -> MonteCarloMse:
    """Decoder MSE averaged over sensing-matrix draws.

    The expectation over signals is exact (error-covariance trace), so
    only matrix randomness is sampled. With ``fresh_matrix_per_signal``
    False, or with a fixed matrix, the result is the closed form for a
    single operator and the standard error is zero. Trials that hit a
    singular Gram are excluded; more than 1% exclusions aborts.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 1 <= m <= model.dim:
        raise ValueError(f"need 1 <= m <= {model.dim}")
    if not fresh_matrix_per_signal or isinstance(matrix, SensingMatrix):
        phi = _resolve_matrix(matrix, m, model.dim, rng.child(0))
        return MonteCarloMse(
            mse=mse_closed_form(model, phi), stderr=0.0, trials=1, excluded=0
        )

    def trial(t: int):
        phi = draw_matrix(matrix, m, model.dim, rng.child(t))
        try:
            return mse_closed_form(model, phi)
        except SingularGramError:
            return None

    values = _run_trials(trial, trials, threads)
    kept = [v for v in values if v is not None]
    excluded = trials - len(kept)
    if excluded > MAX_EXCLUDED_FRACTION * trials:
        raise EstimationError(
            f"{excluded}/{trials} trials excluded as singular; estimate unreliable"
        )
    mean, stderr = _mean_stderr(kept)
    return MonteCarloMse(mse=mean, stderr=stderr, trials=len(kept), excluded=excluded)


def sampled_signal_mse(
    model: SpectralGaussian, phi: SensingMatrix, trials: int, rng: SeededRng
) -> tuple[float, float]:
    """Empirical MSE from decoded sampled signals, for cross-checks
    against the closed form. Returns (mse, stderr)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    signals = sample(model, trials, rng)
    ys = signals @ phi.entries.T
    estimates = map_decode_batch(model, phi, ys)
    sq = np.sum((signals - estimates) ** 2, axis=1)
    mean = float(np.mean(sq))
    stderr = float(np.std(sq, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean, stderr


def ratio_vs_k(
    n: int,
    alpha: float,
    k_values,
    trials: int,
    rng: SeededRng,
    matrix_kind: str = "gaussian",
    threads: int = 1,
) -> RatioCurve:
    """Decoder MSE with M = k fresh measurements against the top-k oracle,
    swept over k for a power-decay model."""
    k_values = [int(k) for k in k_values]
    if not k_values:
        raise ValueError("k_values must be non-empty")
    spectrum = power_decay_spectrum(n, alpha)
    model = SpectralGaussian.from_spectrum(spectrum)
    points = []
    notes = []
    for i, k in enumerate(k_values):
        if k >= n:
            notes.append(f"k={k} omitted: decoder MSE is 0 at full measurement")
            continue
        mc = monte_carlo_mse(
            model, matrix_kind, k, trials, rng.child(i), threads=threads
        )
        best = best_k_term_mse(spectrum, k)
        points.append(
            RatioPoint(
                abscissa=float(k),
                scs_mse=mc.mse,
                best_k_mse=best,
                ratio=mc.mse / best,
                stderr=mc.stderr,
            )
        )
    return RatioCurve(abscissa_label="k", points=tuple(points), notes=tuple(notes))


def ratio_vs_alpha(
    n: int,
    k: int,
    alpha_values,
    trials: int,
    rng: SeededRng,
    matrix_kind: str = "gaussian",
    threads: int = 1,
) -> RatioCurve:
    """Same comparison as ratio_vs_k with k fixed and the spectral decay
    exponent swept."""
    alpha_values = [float(a) for a in alpha_values]
    if not alpha_values:
        raise ValueError("alpha_values must be non-empty")
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    points = []
    for i, alpha in enumerate(alpha_values):
        spectrum = power_decay_spectrum(n, alpha)
        model = SpectralGaussian.from_spectrum(spectrum)
        mc = monte_carlo_mse(
            model, matrix_kind, k, trials, rng.child(i), threads=threads
        )
        best = best_k_term_mse(spectrum, k)
        points.append(
            RatioPoint(
                abscissa=alpha,
                scs_mse=mc.mse,
                best_k_mse=best,
                ratio=mc.mse / best,
                stderr=mc.stderr,
            )
        )
    return RatioCurve(abscissa_label="alpha", points=tuple(points))


def linear_rip_constant(phi: SensingMatrix, k: int) -> float:
    """Smallest delta bounding the singular values of every consecutive
    k-column block of Phi inside [1 - delta, 1 + delta].

    The coordinate range is partitioned into ceil(N/k) consecutive blocks;
    the last block may be narrower. A block wider than M is rank deficient
    and contributes delta >= 1.
    """
    n = phi.cols
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}")
    delta = 0.0
    for start in range(0, n, k):
        block = phi.entries[:, start : start + k]
        svals = np.linalg.svd(block, compute_uv=False)
        smax = float(svals[0])
        smin = 0.0 if block.shape[1] > phi.rows else float(svals[-1])
        delta = max(delta, smax - 1.0, 1.0 - smin)
    return delta


def error_decay_profile(
    model: SpectralGaussian,
    matrix,
    m: int,
    trials: int,
    rng: SeededRng,
    threads: int = 1,
) -> DecayProfile:
    """Empirical mean of |error[n]| per coordinate, fresh matrix and fresh
    signal per trial.

    The monotone flag reports whether the profile is non-increasing within
    statistical tolerance: an increase only counts as a violation when it
    exceeds twice the combined standard error of the adjacent means.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def trial(t: int):
        sub = rng.child(t)
        phi = _resolve_matrix(matrix, m, model.dim, sub.child(0))
        x = sample(model, 1, sub.child(1))[0]
        try:
            estimate = map_decode(model, phi, phi.entries @ x).estimate
        except SingularGramError:
            return None
        return np.abs(x - estimate)

    rows = _run_trials(trial, trials, threads)
    kept = [r for r in rows if r is not None]
    excluded = trials - len(kept)
    if excluded > MAX_EXCLUDED_FRACTION * trials:
        raise EstimationError(
            f"{excluded}/{trials} trials excluded as singular; estimate unreliable"
        )
    stacked = np.array(kept)
    means = stacked.mean(axis=0)
    count = stacked.shape[0]
    stderrs = (
        stacked.std(axis=0, ddof=1) / math.sqrt(count)
        if count > 1
        else np.zeros(model.dim)
    )
    increases = np.diff(means)
    slack = 2.0 * np.sqrt(stderrs[:-1] ** 2 + stderrs[1:] ** 2)
    monotone = bool(np.all((increases <= 0) | (increases < slack)))
    return DecayProfile(
        means=means,
        stderrs=stderrs,
        monotone=monotone,
        trials=count,
        excluded=excluded,
    )


def _restricted_traces(cov: np.ndarray, phi: SensingMatrix, k: int):
    """Trace pairs (E||Phi eta_B||^2, E||eta_B||^2) for B = K and its
    complement, from an error covariance."""
    head = phi.entries[:, :k]
    tail = phi.entries[:, k:]
    c_head = cov[:k, :k]
    c_tail = cov[k:, k:]
    a_num = float(np.sum((head @ c_head) * head))
    b_num = float(np.sum((tail @ c_tail) * tail))
    return a_num, float(np.trace(c_head)), b_num, float(np.trace(c_tail))


def rip_expectation_constants(
    model: SpectralGaussian,
    phi_or_kind,
    k: int,
    trials: int,
    rng: SeededRng,
    method: str = "closed-form",
    m: int | None = None,
    threads: int = 1,
) -> RipExpectationReport:
    """Energy-ratio constants of the decoding error on K = {1..k}.

    "closed-form" evaluates the restricted traces of the error covariance
    per matrix draw and averages numerators and denominators over draws;
    "monte-carlo" estimates the same four expectations from decoded
    sampled signals. A fixed matrix makes the closed form exact in one
    evaluation.
    """
    if not 1 <= k < model.dim:
        raise ValueError("need 1 <= k < dim")
    if method not in ("closed-form", "monte-carlo"):
        raise ValueError(f"unknown method {method!r}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    fixed = isinstance(phi_or_kind, SensingMatrix)
    if fixed:
        m = phi_or_kind.rows
    if m is None:
        raise ValueError("m is required when drawing matrices from a kind")

    if method == "closed-form":
        if fixed:
            cov = error_covariance(model, phi_or_kind)
            sums = _restricted_traces(cov, phi_or_kind, k)
            used = 1
        else:

            def trial(t: int):
                phi = draw_matrix(phi_or_kind, m, model.dim, rng.child(t).child(0))
                try:
                    return _restricted_traces(error_covariance(model, phi), phi, k)
                except SingularGramError:
                    return None

            rows = _run_trials(trial, trials, threads)
            kept = [r for r in rows if r is not None]
            if trials - len(kept) > MAX_EXCLUDED_FRACTION * trials:
                raise EstimationError("too many singular draws")
            sums = tuple(math.fsum(r[i] for r in kept) for i in range(4))
            used = len(kept)
    else:

        def trial(t: int):
            sub = rng.child(t)
            phi = _resolve_matrix(phi_or_kind, m, model.dim, sub.child(0))
            x = sample(model, 1, sub.child(1))[0]
            try:
                estimate = map_decode(model, phi, phi.entries @ x).estimate
            except SingularGramError:
                return None
            eta = x - estimate
            return (
                float(np.sum((phi.entries[:, :k] @ eta[:k]) ** 2)),
                float(np.sum(eta[:k] ** 2)),
                float(np.sum((phi.entries[:, k:] @ eta[k:]) ** 2)),
                float(np.sum(eta[k:] ** 2)),
            )

        rows = _run_trials(trial, trials, threads)
        kept = [r for r in rows if r is not None]
        if trials - len(kept) > MAX_EXCLUDED_FRACTION * trials:
            raise EstimationError("too many singular draws")
        sums = tuple(math.fsum(r[i] for r in kept) for i in range(4))
        used = len(kept)

    a_num, a_den, b_num, b_den = sums
    scale = float(np.trace(model.covariance)) * used
    if a_den <= 1e-12 * scale or b_den <= 1e-12 * scale:
        raise DegenerateSupportError(
            "expected restricted error energy is zero; constants undefined"
        )
    a_k = a_num / a_den
    b_k = b_num / b_den
    return RipExpectationReport(
        k=k, a_k=a_k, b_k=b_k, c0=1.0 + b_k / a_k, trials=used, method=method
    )


def null_space_equality_check(
    model: SpectralGaussian,
    matrix,
    m: int,
    k: int,
    trials: int,
    rng: SeededRng,
    threads: int = 1,
) -> NullSpaceCheck:
    """Monte Carlo evaluation of both sides of
    E||eta||^2 = (1 + b_k/a_k) E||eta restricted to K-complement||^2.

    Degenerate configurations (restricted error energy zero, e.g. an
    invertible operator) are flagged rather than raised: both sides are
    reported as the raw estimates and the constants as NaN.
    """
    if not 1 <= k < model.dim:
        raise ValueError("need 1 <= k < dim")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def trial(t: int):
        sub = rng.child(t)
        phi = _resolve_matrix(matrix, m, model.dim, sub.child(0))
        x = sample(model, 1, sub.child(1))[0]
        try:
            estimate = map_decode(model, phi, phi.entries @ x).estimate
        except SingularGramError:
            return None
        eta = x - estimate
        return (
            float(np.sum(eta**2)),
            float(np.sum((phi.entries[:, :k] @ eta[:k]) ** 2)),
            float(np.sum(eta[:k] ** 2)),
            float(np.sum((phi.entries[:, k:] @ eta[k:]) ** 2)),
            float(np.sum(eta[k:] ** 2)),
        )

    rows = _run_trials(trial, trials, threads)
    kept = [r for r in rows if r is not None]
    if trials - len(kept) > MAX_EXCLUDED_FRACTION * trials:
        raise EstimationError("too many singular draws")
    used = len(kept)
    total, a_num, a_den, b_num, b_den = (
        math.fsum(r[i] for r in kept) for i in range(5)
    )
    lhs = total / used
    scale = float(np.trace(model.covariance)) * used
    if a_den <= 1e-12 * scale or b_den <= 1e-12 * scale:
        return NullSpaceCheck(
            lhs=lhs,
            rhs=0.0,
            a_k=math.nan,
            b_k=math.nan,
            c0=math.nan,
            degenerate=True,
        )
    a_k = a_num / a_den
    b_k = b_num / b_den
    c0 = 1.0 + b_k / a_k
    return NullSpaceCheck(
        lhs=lhs, rhs=c0 * (b_den / used), a_k=a_k, b_k=b_k, c0=c0, degenerate=False
    )


def _format(value: float) -> str:
    return f"{value:.9g}"


def write_ratio_curve_csv(curve: RatioCurve, path) -> None:
    lines = [f"{curve.abscissa_label},scs_mse,best_k_mse,ratio,stderr"]
    for p in curve.points:
        lines.append(
            ",".join(
                _format(v)
                for v in (p.abscissa, p.scs_mse, p.best_k_mse, p.ratio, p.stderr)
            )
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_decay_profile_csv(profile: DecayProfile, path) -> None:
    lines = ["n,mean_abs_error,stderr"]
    for i, (mean, se) in enumerate(zip(profile.means, profile.stderrs), start=1):
        lines.append(f"{i},{_format(mean)},{_format(se)}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_c0_sweep_csv(reports: list[RipExpectationReport], path) -> None:
    lines = ["k,a_k,b_k,c0"]
    for r in reports:
        lines.append(
            f"{r.k},{_format(r.a_k)},{_format(r.b_k)},{_format(r.c0)}"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
