import math

import numpy as np
import pytest

from statcs import SeededRng, SpectralGaussian, power_decay_spectrum, sample
from statcs.analysis import (
    DegenerateSupportError,
    EstimationError,
    draw_matrix,
    error_decay_profile,
    linear_rip_constant,
    monte_carlo_mse,
    null_space_equality_check,
    ratio_vs_alpha,
    ratio_vs_k,
    rip_expectation_constants,
    sampled_signal_mse,
    write_decay_profile_csv,
    write_ratio_curve_csv,
)
from statcs.decoder import map_decode, mse_closed_form
from statcs.gaussian_model import best_k_term_mse
from statcs.sensing import SensingMatrix, gaussian_matrix, subsampling_matrix


def selector_matrix(k, n):
    entries = np.zeros((k, n))
    entries[np.arange(k), np.arange(k)] = 1.0
    return SensingMatrix(rows=k, cols=n, entries=entries, kind="subsample")


class TestMonteCarloMse:
    def test_fixed_matrix_reproduces_closed_form(self, decay_model, rng):
        phi = gaussian_matrix(12, 64, rng)
        mc = monte_carlo_mse(decay_model, phi, 12, 500, rng)
        assert mc.mse == mse_closed_form(decay_model, phi)
        assert mc.stderr == 0.0

    def test_not_fresh_uses_single_draw(self, decay_model, rng):
        mc = monte_carlo_mse(
            decay_model, "gaussian", 12, 500, rng, fresh_matrix_per_signal=False
        )
        phi = draw_matrix("gaussian", 12, 64, rng.child(0))
        assert mc.mse == mse_closed_form(decay_model, phi)
        assert mc.trials == 1

    def test_full_measurement_is_zero(self, rng):
        model = SpectralGaussian.from_spectrum(power_decay_spectrum(8, 1.0))
        mc = monte_carlo_mse(model, "gaussian", 8, 50, rng)
        assert abs(mc.mse) < 1e-9

    def test_excessive_singular_draws_abort(self, rng):
        # rank-1 support: a subsampling draw missing coordinate 0 has an
        # exactly zero Gram that jitter cannot rescue
        model = SpectralGaussian(
            dim=4,
            mean=np.zeros(4),
            basis=np.eye(4),
            eigenvalues=np.array([1.0, 0.0, 0.0, 0.0]),
        )
        with pytest.raises(EstimationError):
            monte_carlo_mse(model, "subsample", 2, 100, rng)

    def test_threads_match_serial(self, decay_model, rng):
        serial = monte_carlo_mse(decay_model, "gaussian", 8, 64, rng, threads=1)
        threaded = monte_carlo_mse(decay_model, "gaussian", 8, 64, rng, threads=4)
        assert serial == threaded

    def test_sampled_signal_cross_check(self, decay_model, rng):
        phi = gaussian_matrix(10, 64, rng.child(1))
        mse, stderr = sampled_signal_mse(decay_model, phi, 20_000, rng.child(2))
        exact = mse_closed_form(decay_model, phi)
        assert abs(mse - exact) < 4 * stderr
        assert mse == pytest.approx(exact, rel=0.05)


class TestRatioCurves:
    def test_ratio_columns_consistent(self, rng):
        curve = ratio_vs_k(32, 2.0, [2, 4, 8], 50, rng)
        assert curve.abscissa_label == "k"
        for p in curve.points:
            assert p.ratio == pytest.approx(p.scs_mse / p.best_k_mse, rel=1e-12)
            assert p.ratio >= 1.0

    def test_degenerate_point_omitted_with_note(self, rng):
        curve = ratio_vs_k(8, 1.0, [2, 8], 20, rng)
        assert len(curve.points) == 1
        assert len(curve.notes) == 1
        assert "k=8" in curve.notes[0]

    def test_alpha_curve_labels(self, rng):
        curve = ratio_vs_alpha(16, 4, [1.0, 2.0], 40, rng)
        assert curve.abscissa_label == "alpha"
        assert [p.abscissa for p in curve.points] == [1.0, 2.0]

    def test_rejects_empty_ranges(self, rng):
        with pytest.raises(ValueError):
            ratio_vs_k(16, 1.0, [], 10, rng)
        with pytest.raises(ValueError):
            ratio_vs_alpha(16, 20, [1.0], 10, rng)


class TestLinearRipConstant:
    def test_permutation_is_exact_isometry(self, rng):
        phi = subsampling_matrix(16, 16, rng)
        assert linear_rip_constant(phi, 4) == pytest.approx(0.0, abs=1e-12)

    def test_zero_matrix_gives_one(self):
        phi = SensingMatrix(rows=3, cols=9, entries=np.zeros((3, 9)), kind="composed")
        assert linear_rip_constant(phi, 3) == 1.0

    def test_k_equals_n_is_full_matrix_deviation(self, rng):
        phi = gaussian_matrix(6, 12, rng)
        svals = np.linalg.svd(phi.entries, compute_uv=False)
        expected = max(svals[0] - 1.0, 1.0 - 0.0)  # 12 > 6 columns: rank deficient
        assert linear_rip_constant(phi, 12) == pytest.approx(expected, rel=1e-12)

    def test_gaussian_below_one_with_high_frequency(self, rng):
        k, m, n = 4, 16, 64
        hits = sum(
            linear_rip_constant(gaussian_matrix(m, n, rng.child(t)), k) < 1.0
            for t in range(100)
        )
        assert hits >= 99

    def test_argument_validation(self, rng):
        phi = gaussian_matrix(4, 8, rng)
        with pytest.raises(ValueError):
            linear_rip_constant(phi, 0)
        with pytest.raises(ValueError):
            linear_rip_constant(phi, 9)


class TestErrorDecayProfile:
    def test_identity_profile_is_zero(self, decay_model, rng):
        profile = error_decay_profile(
            decay_model, selector_matrix(64, 64), 64, 50, rng
        )
        np.testing.assert_array_equal(profile.means, np.zeros(64))
        assert profile.monotone

    def test_selector_matches_half_normal_oracle(self, rng):
        spec = power_decay_spectrum(16, 1.0)
        model = SpectralGaussian.from_spectrum(spec)
        k, trials = 4, 20_000
        profile = error_decay_profile(model, selector_matrix(k, 16), k, trials, rng)
        np.testing.assert_allclose(profile.means[:k], 0.0, atol=1e-10)
        half_normal = np.sqrt(2.0 * spec.eigenvalues[k:] / np.pi)
        np.testing.assert_allclose(profile.means[k:], half_normal, rtol=0.05)
        assert np.all(np.diff(profile.means[k:]) < 0)

    def test_gaussian_profile_monotone_small(self, decay_model, rng):
        profile = error_decay_profile(decay_model, "gaussian", 10, 2000, rng)
        assert profile.monotone
        assert profile.means[0] > profile.means[-1]

    def test_threads_match_serial(self, decay_model, rng):
        a = error_decay_profile(decay_model, "gaussian", 6, 40, rng, threads=1)
        b = error_decay_profile(decay_model, "gaussian", 6, 40, rng, threads=3)
        np.testing.assert_array_equal(a.means, b.means)


class TestRipExpectationConstants:
    def test_degenerate_identity_raises(self, decay_model, rng):
        with pytest.raises(DegenerateSupportError):
            rip_expectation_constants(
                decay_model, selector_matrix(64, 64), 10, 10, rng
            )

    def test_methods_agree(self, decay_model, rng):
        closed = rip_expectation_constants(
            decay_model, "gaussian", 10, 2000, rng.child(0), method="closed-form", m=10
        )
        sampled = rip_expectation_constants(
            decay_model, "gaussian", 10, 10_000, rng.child(1), method="monte-carlo", m=10
        )
        assert closed.c0 == pytest.approx(sampled.c0, rel=0.03)

    def test_fixed_matrix_closed_form_is_exact_single_evaluation(
        self, decay_model, rng
    ):
        phi = gaussian_matrix(10, 64, rng)
        a = rip_expectation_constants(decay_model, phi, 10, 1, rng)
        b = rip_expectation_constants(decay_model, phi, 10, 500, rng.child(9))
        assert a == b

    def test_validation(self, decay_model, rng):
        with pytest.raises(ValueError):
            rip_expectation_constants(decay_model, "gaussian", 64, 10, rng, m=10)
        with pytest.raises(ValueError):
            rip_expectation_constants(decay_model, "gaussian", 10, 10, rng)
        with pytest.raises(ValueError):
            rip_expectation_constants(
                decay_model, "gaussian", 10, 10, rng, method="bogus", m=10
            )


class TestNullSpaceEquality:
    def test_identity_degenerate_flagged(self, decay_model, rng):
        check = null_space_equality_check(
            decay_model, selector_matrix(64, 64), 64, 10, 50, rng
        )
        assert check.degenerate
        assert check.lhs == pytest.approx(0.0, abs=1e-20)
        assert check.rhs == 0.0

    def test_identity_holds_tightly(self, decay_model, rng):
        check = null_space_equality_check(decay_model, "gaussian", 10, 10, 1000, rng)
        assert not check.degenerate
        assert check.lhs == pytest.approx(check.rhs, rel=1e-3)

    def test_pythagorean_split(self, decay_model, rng):
        # per-sample split of error energy over disjoint supports
        phi = gaussian_matrix(10, 64, rng.child(0))
        x = sample(decay_model, 200, rng.child(1))
        for row in x[:50]:
            eta = row - map_decode(decay_model, phi, phi.entries @ row).estimate
            total = float(np.sum(eta**2))
            split = float(np.sum(eta[:10] ** 2)) + float(np.sum(eta[10:] ** 2))
            assert total == pytest.approx(split, rel=1e-12)

    def test_instance_optimality_consequence(self, decay_model, rng):
        spec = decay_model.spectrum
        for k in (6, 10, 16):
            report = rip_expectation_constants(
                decay_model,
                "gaussian",
                k,
                2000,
                rng.child(k),
                method="closed-form",
                m=k,
            )
            mc = monte_carlo_mse(decay_model, "gaussian", k, 2000, rng.child(100 + k))
            bound = 4.0 * report.c0 * best_k_term_mse(spec, k)
            assert mc.mse <= bound


class TestCsvOutput:
    def test_ratio_csv_deterministic_and_formatted(self, rng, tmp_path):
        curve = ratio_vs_k(16, 2.0, [2, 4], 30, rng)
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_ratio_curve_csv(curve, p1)
        write_ratio_curve_csv(curve, p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == "k,scs_mse,best_k_mse,ratio,stderr"
        assert len(lines) == 3

    def test_decay_csv_shape(self, decay_model, rng, tmp_path):
        profile = error_decay_profile(decay_model, "gaussian", 6, 30, rng)
        path = tmp_path / "decay.csv"
        write_decay_profile_csv(profile, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "n,mean_abs_error,stderr"
        assert len(lines) == 65
