"""Tests for the GP-NARX baseline."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from baseline_gpnarx import (GpNarxModel, GpNarxObjective, evidence, evidence_grads, fit_gpnarx,
                             narx_regressors, predict_gpnarx, simulate_gpnarx)
from config import TrainOptions
from kernel import KernelParams, cross_gram
from trainer import check_objective_gradient
from utils import StructuralError

from conftest import synthetic_sequence


def _model(X, targets, sf2=1.2, ard=(0.7, 1.4), noise=0.05):
    return GpNarxModel(kernel=KernelParams(sf2, np.array(ard)), noise_variance=noise, X=X,
                       targets=targets, lag=1, input_lag=1)


class TestRegressors:

    def test_rows_and_targets(self):
        u = np.arange(6, dtype=float)
        y = 10 + np.arange(6, dtype=float)
        X, t = narx_regressors(u, y, lag=2, input_lag=3)
        # first row is t = 3: [y2, y1, u2, u1, u0]
        np.testing.assert_array_equal(X[0], [12, 11, 2, 1, 0])
        np.testing.assert_array_equal(t, [13, 14, 15])

    def test_too_short(self):
        with pytest.raises(StructuralError):
            narx_regressors(np.zeros(3), np.zeros(3), 2, 2)


class TestEvidence:

    def test_matches_direct_density(self, rng):
        X = rng.standard_normal((7, 2))
        t = rng.standard_normal(7)
        kernel = KernelParams(0.8, np.array([1.5, 0.3]))
        K = cross_gram(X, X, kernel) + 0.1 * np.eye(7)
        direct = multivariate_normal(mean=np.zeros(7), cov=K).logpdf(t)
        assert evidence(X, t, kernel, 0.1) == pytest.approx(direct, rel=1e-8)

    def test_gradients(self):
        u, y = synthetic_sequence(30, seed=4)
        objective = GpNarxObjective(u, y, 2, 2)
        theta = objective.initial_vector(0, kernel_jitter=0.3)
        report = check_objective_gradient(objective.value_and_grad, theta, objective.blocks(),
                                          tolerance=1e-5)
        assert report.passed, report.worst

    def test_value_consistent(self, rng):
        X = rng.standard_normal((6, 2))
        t = rng.standard_normal(6)
        theta = np.log([0.9, 0.5, 2.0, 0.02])
        value, _ = evidence_grads(X, t, theta)
        kernel = KernelParams(0.9, np.array([0.5, 2.0]))
        assert value == pytest.approx(evidence(X, t, kernel, 0.02), rel=1e-12)


class TestPrediction:

    def test_hand_evaluation_on_three_points(self):
        X = np.array([[0.0, 0.0], [1.0, -0.5], [-0.8, 0.9]])
        t = np.array([0.3, -0.4, 1.1])
        model = _model(X, t)
        xs = np.array([[0.2, 0.1]])
        K = cross_gram(X, X, model.kernel) + 0.05 * np.eye(3)
        ks = cross_gram(xs, X, model.kernel)[0]
        mean, var = predict_gpnarx(model, xs)
        assert mean[0] == pytest.approx(ks @ np.linalg.solve(K, t), rel=1e-12)
        assert var[0] == pytest.approx(1.2 - ks @ np.linalg.solve(K, ks), rel=1e-10)
        _, noisy = predict_gpnarx(model, xs, include_noise=True)
        assert noisy[0] == pytest.approx(var[0] + 0.05, rel=1e-12)

    def test_interpolates_with_tiny_noise(self):
        X = np.array([[0.0, 0.0], [2.0, -1.0], [-2.0, 1.5]])
        t = np.array([0.3, -0.4, 1.1])
        model = _model(X, t, noise=1e-10)
        mean, var = predict_gpnarx(model, X[1])
        assert mean[0] == pytest.approx(-0.4, abs=1e-6)
        assert var[0] < 1e-6

    def test_reverts_to_prior_far_away(self):
        X = np.array([[0.0, 0.0], [1.0, -0.5]])
        model = _model(X, np.array([0.5, -0.5]))
        mean, var = predict_gpnarx(model, np.array([50.0, -50.0]), include_noise=True)
        assert abs(mean[0]) < 1e-12
        assert var[0] == pytest.approx(1.2 + 0.05, rel=1e-12)


@pytest.fixture(scope="module")
def fitted():
    u, y = synthetic_sequence(60, seed=9)
    return fit_gpnarx(u, y, 2, 2, TrainOptions(max_evals=60, seed=0)), u, y


class TestFitAndSimulate:

    def test_fit_improves_evidence(self, fitted):
        model, u, y = fitted
        objective = GpNarxObjective(u, y, 2, 2)
        start, _ = objective.value_and_grad(objective.initial_vector(0))
        assert model.evidence >= start
        assert model.evidence == pytest.approx(
            evidence(model.X, model.targets, model.kernel, model.noise_variance), rel=1e-10)
        assert len(model.trace) >= 1

    def test_simulation_length_and_seed_window(self, fitted):
        model, u, y = fitted
        u_test = u[:25]
        mean, var = simulate_gpnarx(model, u_test, y[:2])
        assert mean.shape == (23,)
        assert np.all(var >= model.noise_variance - 1e-10)
        x0 = np.array([y[1], y[0], u_test[1], u_test[0]])
        first, _ = predict_gpnarx(model, x0)
        assert mean[0] == pytest.approx(first[0], rel=1e-12)

    def test_seed_window_length_checked(self, fitted):
        model, u, y = fitted
        with pytest.raises(StructuralError):
            simulate_gpnarx(model, u[:10], y[:3])
