import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from statcs import SeededRng, sample
from statcs.decoder import map_decode
from statcs.gaussian_model import SpectralGaussian, fit_gaussian, power_decay_spectrum
from statcs.gmm import (
    EVIDENCE_JITTER_REL,
    GmmModel,
    PatchMeasurement,
    component_log_evidence,
    e_step,
    init_directional,
    load_gmm,
    m_step,
    map_em_decode,
    save_gmm,
)
from statcs.sensing import gaussian_matrix, subsampling_matrix

from conftest import random_spd_model


def measure(component, phi, x):
    return PatchMeasurement(y=phi.entries @ x, phi=phi, patch_index=0)


def synthetic_measurements(gmm, labels, m, rng, matrix=gaussian_matrix):
    out = []
    for i, k in enumerate(labels):
        x = sample(gmm.components[k], 1, rng.child(2 * i))[0]
        phi = matrix(m, gmm.patch_dim, rng.child(2 * i + 1))
        out.append(PatchMeasurement(y=phi.entries @ x, phi=phi, patch_index=i))
    return out


class TestInitDirectional:
    def test_components_pass_invariants(self):
        gmm = init_directional(20, 8, 3.0)
        assert len(gmm) == 20
        assert gmm.patch_dim == 64
        np.testing.assert_allclose(gmm.weights, np.full(20, 0.05), rtol=1e-15)

    def test_single_component_is_isotropic(self):
        gmm = init_directional(1, 8, 3.0)
        flat = np.full(64, 1.0 / 8.0)
        np.testing.assert_allclose(gmm.components[0].basis[:, 0], flat, atol=1e-12)

    def test_self_selectivity(self, rng):
        gmm = init_directional(20, 8, 3.0)
        wins = 0
        trials = 500
        for t in range(trials):
            k = t % 19
            other = (k + 10) % 20
            x = sample(gmm.components[k], 1, rng.child(3 * t))[0]
            phi = gaussian_matrix(16, 64, rng.child(3 * t + 1))
            y = phi.entries @ x
            own = map_decode(gmm.components[k], phi, y).estimate
            foreign = map_decode(gmm.components[other], phi, y).estimate
            if np.sum((x - own) ** 2) < np.sum((x - foreign) ** 2):
                wins += 1
        assert wins / trials >= 0.90

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            init_directional(0, 8, 3.0)
        with pytest.raises(ValueError):
            init_directional(3, 0, 3.0)


class TestComponentLogEvidence:
    def test_zero_residual_closed_form(self, rng):
        comp = random_spd_model(9, rng.child(0))
        phi = gaussian_matrix(4, 9, rng.child(1))
        y = phi.entries @ comp.mean
        gram = phi.entries @ comp.covariance @ phi.entries.T
        gram = 0.5 * (gram + gram.T)
        tau = EVIDENCE_JITTER_REL * np.trace(gram) / 4
        expected = math.log(0.3) - 0.5 * math.log(
            np.linalg.det(2.0 * math.pi * (gram + tau * np.eye(4)))
        )
        assert component_log_evidence(y, phi, comp, 0.3) == pytest.approx(
            expected, rel=1e-10
        )

    def test_doubling_covariance_decreases_evidence_at_mean(self, rng):
        comp = random_spd_model(6, rng.child(2))
        doubled = SpectralGaussian(
            dim=6,
            mean=comp.mean,
            basis=comp.basis,
            eigenvalues=2.0 * comp.eigenvalues,
        )
        phi = gaussian_matrix(3, 6, rng.child(3))
        y = phi.entries @ comp.mean
        assert component_log_evidence(y, phi, doubled, 0.5) < component_log_evidence(
            y, phi, comp, 0.5
        )

    def test_matches_scipy_logpdf(self, rng):
        for i in range(5):
            comp = random_spd_model(8, rng.child(10 + i))
            phi = gaussian_matrix(4, 8, rng.child(20 + i))
            x = sample(comp, 1, rng.child(30 + i))[0]
            y = phi.entries @ x
            gram = phi.entries @ comp.covariance @ phi.entries.T
            gram = 0.5 * (gram + gram.T)
            tau = EVIDENCE_JITTER_REL * np.trace(gram) / 4
            oracle = math.log(0.2) + multivariate_normal(
                mean=phi.entries @ comp.mean, cov=gram + tau * np.eye(4)
            ).logpdf(y)
            ours = component_log_evidence(y, phi, comp, 0.2)
            assert ours == pytest.approx(oracle, rel=1e-8)

    def test_zero_weight_scores_minus_inf(self, rng):
        comp = random_spd_model(4, rng)
        phi = gaussian_matrix(2, 4, rng.child(1))
        assert component_log_evidence(np.zeros(2), phi, comp, 0.0) == -math.inf


class TestEStep:
    def test_single_component_matches_map_decode(self, rng):
        gmm = init_directional(1, 4, 2.0)
        meas = synthetic_measurements(gmm, [0] * 10, 8, rng.child(0))
        res = e_step(gmm, meas)
        np.testing.assert_array_equal(res.assignments, np.zeros(10, dtype=int))
        for i, m in enumerate(meas):
            expected = map_decode(gmm.components[0], m.phi, m.y).estimate
            np.testing.assert_array_equal(res.estimates[i], expected)

    def test_assignment_accuracy_on_synthetic_mixture(self, rng):
        gmm = init_directional(4, 8, 3.0)
        labels = [t % 3 for t in range(1000)]
        meas = synthetic_measurements(gmm, labels, 32, rng.child(1))
        res = e_step(gmm, meas)
        accuracy = np.mean(res.assignments == np.array(labels))
        assert accuracy >= 0.95

    def test_total_is_sum_of_maxima(self, rng):
        gmm = init_directional(3, 4, 2.0)
        meas = synthetic_measurements(gmm, [0, 1, 2, 1], 8, rng.child(2))
        res = e_step(gmm, meas)
        per_patch = [
            max(
                component_log_evidence(m.y, m.phi, comp, float(w))
                for comp, w in zip(gmm.components, gmm.weights)
            )
            for m in meas
        ]
        assert res.total_log_posterior == pytest.approx(
            math.fsum(per_patch), rel=1e-9
        )

    def test_joint_scaling_invariance(self, rng):
        gmm = init_directional(5, 8, 3.0)
        meas = synthetic_measurements(gmm, [0, 2, 4, 1, 3], 16, rng.child(3))
        res = e_step(gmm, meas)
        scaled = [
            PatchMeasurement(
                y=7.5 * m.y,
                phi=type(m.phi)(
                    rows=m.phi.rows,
                    cols=m.phi.cols,
                    entries=7.5 * m.phi.entries,
                    kind="composed",
                ),
                patch_index=m.patch_index,
            )
            for m in meas
        ]
        res2 = e_step(gmm, scaled)
        np.testing.assert_array_equal(res.assignments, res2.assignments)
        for a, b in zip(res.estimates, res2.estimates):
            assert np.linalg.norm(a - b) <= 1e-9 * max(np.linalg.norm(a), 1.0)

    def test_empty_measurements_rejected(self):
        with pytest.raises(ValueError):
            e_step(init_directional(2, 4, 2.0), [])


class TestMStep:
    def test_all_patches_to_one_component(self, rng):
        previous = init_directional(3, 4, 2.0)
        estimates = sample(previous.components[1], 40, rng)
        assignments = np.full(40, 1)
        new = m_step(estimates, assignments, previous, 1e-8)
        np.testing.assert_array_equal(new.weights, [0.0, 1.0, 0.0])
        refit = fit_gaussian(estimates, 1e-8)
        np.testing.assert_allclose(
            new.components[1].covariance, refit.covariance, atol=1e-12
        )
        assert new.components[0] is previous.components[0]
        assert new.components[2] is previous.components[2]

    def test_weights_sum_to_one(self, rng):
        previous = init_directional(4, 4, 2.0)
        estimates = sample(previous.components[0], 31, rng)
        assignments = np.array([0, 1, 2, 3] * 7 + [0, 1, 2])
        new = m_step(estimates, assignments, previous, 1e-6)
        assert math.fsum(new.weights.tolist()) == pytest.approx(1.0, abs=1e-12)

    def test_recovers_component_means(self, rng):
        previous = init_directional(3, 4, 2.0)
        per = 400
        labels = np.repeat(np.arange(3), per)
        pool = [
            sample(previous.components[k], per, rng.child(k)) for k in range(3)
        ]
        estimates = np.vstack(pool)
        new = m_step(estimates, labels, previous, 1e-9)
        for k in range(3):
            lam1 = previous.components[k].eigenvalues[0]
            tol = 3.0 * math.sqrt(lam1 / per)
            assert np.max(np.abs(new.components[k].mean - previous.components[k].mean)) < tol


class TestMapEmDecode:
    def test_single_iteration_equals_one_e_step(self, rng):
        gmm = init_directional(3, 4, 3.0)
        meas = synthetic_measurements(gmm, [0, 1, 2] * 5, 8, rng.child(4))
        estimates, assignments, model, trace = map_em_decode(meas, 3, max_iters=1)
        reference = e_step(init_directional(3, 4, 3.0), meas)
        np.testing.assert_array_equal(assignments, reference.assignments)
        np.testing.assert_array_equal(estimates, reference.estimates)
        assert len(trace.iterations) == 1

    def test_log_posterior_monotone(self, rng):
        gmm = init_directional(4, 8, 3.0)
        labels = [t % 3 for t in range(300)]
        meas = synthetic_measurements(gmm, labels, 32, rng.child(5))
        _, _, _, trace = map_em_decode(meas, 4, max_iters=6)
        assert trace.is_monotone(slack=1e-6)

    def test_converged_state_is_stable(self, rng):
        gmm = init_directional(4, 8, 3.0)
        labels = [t % 3 for t in range(200)]
        meas = synthetic_measurements(gmm, labels, 32, rng.child(6))
        _, assignments, model, trace = map_em_decode(meas, 4, max_iters=8)
        again = e_step(model, meas)
        np.testing.assert_array_equal(again.assignments, assignments)

    def test_close_to_known_assignment_oracle(self, rng):
        gmm = init_directional(4, 8, 3.0)
        labels = [t % 3 for t in range(600)]
        meas = synthetic_measurements(gmm, labels, 32, rng.child(7))
        estimates, _, _, _ = map_em_decode(meas, 4, max_iters=5)
        oracle_mse = []
        ours_mse = []
        for i, (m, k) in enumerate(zip(meas, labels)):
            x = sample(gmm.components[k], 1, rng.child(7).child(2 * i))[0]
            oracle = map_decode(gmm.components[k], m.phi, m.y).estimate
            oracle_mse.append(np.sum((x - oracle) ** 2))
            ours_mse.append(np.sum((x - estimates[i]) ** 2))
        assert np.mean(ours_mse) <= 1.5 * np.mean(oracle_mse)

    def test_validation(self, rng):
        gmm = init_directional(2, 4, 2.0)
        meas = synthetic_measurements(gmm, [0], 8, rng)
        with pytest.raises(ValueError):
            map_em_decode(meas, 2, max_iters=0)
        with pytest.raises(ValueError):
            map_em_decode([], 2)


class TestGmmModelType:
    def test_weights_must_sum_to_one(self):
        comp = init_directional(1, 4, 2.0).components[0]
        with pytest.raises(ValueError):
            GmmModel(components=(comp,), weights=np.array([0.9]), patch_dim=16)

    def test_dimension_mismatch_rejected(self):
        comp = init_directional(1, 4, 2.0).components[0]
        with pytest.raises(ValueError):
            GmmModel(components=(comp,), weights=np.array([1.0]), patch_dim=9)

    def test_json_round_trip(self, tmp_path, rng):
        gmm = init_directional(3, 4, 2.0)
        path = tmp_path / "mixture.json"
        save_gmm(gmm, path)
        back = load_gmm(path)
        assert back.patch_dim == gmm.patch_dim
        np.testing.assert_array_equal(back.weights, gmm.weights)
        for a, b in zip(back.components, gmm.components):
            np.testing.assert_array_equal(a.covariance, b.covariance)
            np.testing.assert_array_equal(a.mean, b.mean)

    def test_patch_measurement_validation(self, rng):
        phi = subsampling_matrix(4, 16, rng)
        with pytest.raises(ValueError):
            PatchMeasurement(y=np.zeros(5), phi=phi, patch_index=0)
