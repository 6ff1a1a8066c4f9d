"""Tests for predictive moments, free simulation and prediction files."""

import numpy as np
import pandas as pd
import pytest

from config import ModelConfig, TrainOptions
from kernel import cross_gram
from predictor import (free_simulate, one_step_ahead, predict_rows, predict_step, rmse,
                       write_layer_trajectories, write_predictions)
from psi_stats import UncertainInputSet
from revarb_bound import recover_qz
from trainer import fit
from utils import StructuralError

from conftest import synthetic_sequence


@pytest.fixture
def qz(tiny_state, tiny_data):
    u, y = tiny_data
    return recover_qz(tiny_state, u, y)


def _posterior(layer, X):
    """Deterministic sparse-GP posterior written with explicit inverses."""
    Kz = layer.chol_Kz @ layer.chol_Kz.T
    A = layer.chol_A @ layer.chol_A.T
    k = cross_gram(X, layer.Z, layer.kernel)
    mean = k @ layer.B
    var = (layer.kernel.signal_variance - np.einsum("nm,mk,nk->n", k, np.linalg.inv(Kz), k)
           + np.einsum("nm,mk,nk->n", k, np.linalg.inv(A), k))
    return mean, var, k


class TestPredictRows:

    def test_zero_variance_is_sparse_gp_posterior(self, qz, rng):
        layer = qz.layers[0]
        X = rng.standard_normal((3, layer.Z.shape[1]))
        mean, var, _ = predict_rows(layer, UncertainInputSet(X, np.zeros_like(X)))
        expected_mean, expected_var, _ = _posterior(layer, X)
        np.testing.assert_allclose(mean, expected_mean, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(var, expected_var, rtol=1e-10, atol=1e-9)

    def test_predict_step_single_row(self, qz):
        x = UncertainInputSet(np.zeros((1, 2)), np.full((1, 2), 0.1))
        mean, var = predict_step(qz, 3, x)
        assert np.isfinite(mean)
        assert var >= 0.0

    def test_predict_step_rejects_many_rows(self, qz):
        with pytest.raises(StructuralError):
            predict_step(qz, 3, UncertainInputSet(np.zeros((2, 2)), np.zeros((2, 2))))


@pytest.mark.slow
def test_moments_match_monte_carlo(qz):
    layer = qz.layers[1]
    mean_in = np.array([[0.2, -0.4, 0.1, 0.5]])
    var_in = np.array([[0.3, 0.1, 0.2, 0.05]])
    mean, var = predict_step(qz, 2, UncertainInputSet(mean_in, var_in))

    sampler = np.random.default_rng(99)
    mus, sigmas = [], []
    for _ in range(10):
        X = mean_in + np.sqrt(var_in) * sampler.standard_normal((10 ** 5, 4))
        m, s, _ = _posterior(layer, X)
        mus.append(m)
        sigmas.append(s)
    mus, sigmas = np.concatenate(mus), np.concatenate(sigmas)
    S = mus.shape[0]
    mc_mean = mus.mean()
    assert abs(mean - mc_mean) <= 3 * mus.std() / np.sqrt(S)
    spread = sigmas + (mus - mc_mean) ** 2
    assert abs(var - spread.mean()) <= 3 * spread.std() / np.sqrt(S) + 1e-10


class TestFreeSimulation:

    def test_shapes_and_variances(self, tiny_state, qz, rng):
        u_test = rng.standard_normal(12)
        moments = free_simulate(tiny_state, qz, u_test)
        np.testing.assert_array_equal(moments.steps, np.arange(2, 12))
        assert moments.means.shape == (10, 3)
        assert np.all(moments.variances >= 0)
        noise = tiny_state.layers[-1].noise_variance
        assert np.all(moments.output_variance >= noise - 1e-12)

    def test_deterministic(self, tiny_state, qz, rng):
        u_test = rng.standard_normal(10)
        a = free_simulate(tiny_state, qz, u_test)
        b = free_simulate(tiny_state, qz, u_test)
        np.testing.assert_array_equal(a.means, b.means)

    def test_seed_window_without_variance(self, tiny_state, qz, rng):
        u_test = rng.standard_normal(10)
        init = np.array([[0.1, -0.2], [0.3, 0.0]])
        with_var = free_simulate(tiny_state, qz, u_test, init=init)
        means_only = free_simulate(tiny_state, qz, u_test, init=init, propagate_variance=False)
        # the first layer's first step sees only the seed window and inputs
        assert with_var.means[0, 0] == pytest.approx(means_only.means[0, 0], rel=1e-12)
        assert with_var.variances[0, 0] == pytest.approx(means_only.variances[0, 0], rel=1e-12)

    def test_too_short(self, tiny_state, qz):
        with pytest.raises(StructuralError):
            free_simulate(tiny_state, qz, np.zeros(2))

    def test_windows_read_the_previous_steps(self, tiny_state, qz, rng):
        u_test = rng.standard_normal(12)
        sim = free_simulate(tiny_state, qz, u_test)
        t = 6

        def moment(h, s):
            return sim.means[s - 2, h - 1], sim.variances[s - 2, h - 1]

        rows = {
            1: [moment(1, t - 1), moment(1, t - 2), (u_test[t - 1], 0.0), (u_test[t - 2], 0.0)],
            2: [moment(2, t - 1), moment(2, t - 2), moment(1, t), moment(1, t - 1)],
            3: [moment(2, t), moment(2, t - 1)],
        }
        for h, row in rows.items():
            means, variances = np.array(row).T
            expected = predict_step(qz, h, UncertainInputSet(means[None, :], variances[None, :]))
            assert moment(h, t) == pytest.approx(expected, rel=1e-12, abs=1e-14)

    def test_one_step_ahead(self, tiny_state, qz, tiny_data):
        u, _ = tiny_data
        moments = one_step_ahead(tiny_state, qz, u)
        assert len(moments) == 23
        assert np.all(moments.output_variance > 0)


@pytest.mark.slow
def test_one_step_ahead_beats_free_simulation():
    config = ModelConfig(hidden_layers=1, lag=2, input_lag=2, num_inducing=10)
    u, y = synthetic_sequence(80, seed=2)
    state, _ = fit(config, u, y, TrainOptions(max_evals=300, seed=0))
    qz = recover_qz(state, u, y)
    teacher_forced = one_step_ahead(state, qz, u)
    free = free_simulate(state, qz, u, init=y[None, :2])
    assert rmse(teacher_forced.output_mean, y[2:]) < rmse(free.output_mean, y[2:])


class TestScoresAndFiles:

    def test_rmse(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 5.0]) == pytest.approx(np.sqrt(4.0 / 3.0))
        assert rmse([0.5], [0.5]) == 0.0

    def test_rmse_length_mismatch(self):
        with pytest.raises(StructuralError):
            rmse([1.0, 2.0], [1.0])

    def test_prediction_csv(self, tmp_path):
        path = write_predictions(tmp_path / "p.csv", np.array([3, 4]), np.array([0.1, 0.2]),
                                 np.array([1.0, 2.0]), np.array([0.0, 0.3]))
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["step", "mean", "variance", "y_true"]
        assert rmse(frame["mean"], frame["y_true"]) == pytest.approx(rmse([0.1, 0.2], [0.0, 0.3]))

    def test_layer_trajectories_csv(self, tmp_path, tiny_state, qz, rng):
        moments = free_simulate(tiny_state, qz, rng.standard_normal(8))
        frame = pd.read_csv(write_layer_trajectories(tmp_path / "layers.csv", moments))
        assert list(frame.columns) == ["step", "layer", "mean", "variance"]
        assert len(frame) == 6 * 3
        assert sorted(frame["layer"].unique()) == [1, 2, 3]
