"""Tests for psi statistics: closed forms, degeneracy, Monte-Carlo oracle and gradients."""

import numpy as np
import pytest

from kernel import KernelParams, cross_gram
from psi_stats import UncertainInputSet, compute_psi, psi_grads
from trainer import finite_difference_gradient
from utils import StructuralError


@pytest.fixture
def instance(rng):
    params = KernelParams(1.3, np.array([0.8, 1.6]))
    q = UncertainInputSet(rng.standard_normal((4, 2)), rng.uniform(0.05, 0.5, (4, 2)))
    Z = rng.standard_normal((3, 2))
    return q, Z, params


class TestClosedForms:

    def test_zero_variance_collapses_to_kernel(self, rng):
        params = KernelParams(0.9, np.array([1.1, 0.4, 2.0]))
        X, Z = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
        stats = compute_psi(UncertainInputSet(X, np.zeros_like(X)), Z, params)
        Kxz = cross_gram(X, Z, params)
        assert stats.psi0 == pytest.approx(5 * 0.9, rel=1e-12)
        np.testing.assert_allclose(stats.psi1, Kxz, rtol=1e-10)
        np.testing.assert_allclose(stats.psi2, Kxz.T @ Kxz, rtol=1e-10)

    def test_shapes_and_symmetry(self, instance):
        q, Z, params = instance
        stats = compute_psi(q, Z, params)
        assert stats.psi1.shape == (4, 3)
        assert stats.psi2.shape == (3, 3)
        assert stats.psi2_rows.shape == (4, 3, 3)
        np.testing.assert_allclose(stats.psi2, stats.psi2.T)

    def test_psi2_dominates_outer_product_of_psi1(self, instance):
        # Var[k(x, z)] >= 0 row by row
        q, Z, params = instance
        stats = compute_psi(q, Z, params)
        for i in range(q.num_rows):
            diff = stats.psi2_rows[i] - np.outer(stats.psi1[i], stats.psi1[i])
            assert np.linalg.eigvalsh(diff).min() > -1e-12

    def test_dimension_mismatch(self, instance):
        q, Z, params = instance
        with pytest.raises(StructuralError):
            compute_psi(q, np.zeros((3, 5)), params)

    def test_negative_variance_rejected(self):
        with pytest.raises(StructuralError):
            UncertainInputSet(np.zeros((2, 2)), -np.ones((2, 2)))

    def test_degenerates_monotonically_as_variances_shrink(self, instance):
        # means placed on the inducing inputs: the matching psi1 and psi2 entries grow toward sf2, sf2^2
        _, Z, params = instance
        previous = None
        for scale in (1.0, 0.1, 1e-2, 1e-4, 1e-8):
            stats = compute_psi(UncertainInputSet(Z, np.full_like(Z, scale)), Z, params)
            current = np.concatenate([np.diag(stats.psi1), np.einsum("iii->i", stats.psi2_rows)])
            if previous is not None:
                assert np.all(current > previous)
            previous = current
        K = cross_gram(Z, Z, params)
        np.testing.assert_allclose(stats.psi1, K, rtol=1e-6)
        np.testing.assert_allclose(stats.psi2, K.T @ K, rtol=1e-6)


@pytest.mark.slow
def test_monte_carlo_oracle(instance):
    q, Z, params = instance
    stats = compute_psi(q, Z, params)
    sampler = np.random.default_rng(2024)
    samples = 10 ** 6
    psi1_mc = np.zeros_like(stats.psi1)
    psi1_se = np.zeros_like(stats.psi1)
    psi2_mc = np.zeros_like(stats.psi2)
    psi2_var = np.zeros_like(stats.psi2)
    for i in range(q.num_rows):
        x = q.means[i] + np.sqrt(q.variances[i]) * sampler.standard_normal((samples, 2))
        K = cross_gram(x, Z, params)
        psi1_mc[i] = K.mean(axis=0)
        psi1_se[i] = K.std(axis=0) / np.sqrt(samples)
        outer = K[:, :, None] * K[:, None, :]
        psi2_mc += outer.mean(axis=0)
        psi2_var += outer.var(axis=0) / samples
    assert np.all(np.abs(stats.psi1 - psi1_mc) <= 3 * psi1_se + 1e-12)
    assert np.all(np.abs(stats.psi2 - psi2_mc) <= 3 * np.sqrt(psi2_var) + 1e-12)


class TestPsiGrads:

    def test_matches_finite_differences(self, instance, rng):
        q, Z, params = instance
        N, D = q.means.shape
        M = Z.shape[0]
        a = 0.7
        G1 = rng.standard_normal((N, M))
        S = rng.standard_normal((M, M))
        G2 = S + S.T

        def unpack(theta):
            pos = 0
            means = theta[pos:pos + N * D].reshape(N, D); pos += N * D
            variances = theta[pos:pos + N * D].reshape(N, D); pos += N * D
            z = theta[pos:pos + M * D].reshape(M, D); pos += M * D
            return UncertainInputSet(means, variances), z, KernelParams(theta[pos], theta[pos + 1:])

        def objective(theta):
            qq, z, p = unpack(theta)
            s = compute_psi(qq, z, p)
            return a * s.psi0 + float(np.sum(G1 * s.psi1)) + float(np.sum(G2 * s.psi2))

        theta = np.concatenate([q.means.ravel(), q.variances.ravel(), Z.ravel(),
                                [params.signal_variance], params.ard_weights])
        g = psi_grads(q, Z, params, a, G1, G2)
        analytic = np.concatenate([g.means.ravel(), g.variances.ravel(), g.Z.ravel(),
                                   [g.signal_variance], g.ard_weights])
        numeric = finite_difference_gradient(objective, theta, step=1e-6)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_sign_of_variance_gradient(self):
        # spreading an input centred on z lowers psi1; far away it raises psi1
        params = KernelParams(1.0, np.array([1.0]))
        q = UncertainInputSet(np.array([[0.0], [3.0]]), np.full((2, 1), 0.2))
        g = psi_grads(q, np.zeros((1, 1)), params, 0.0, np.ones((2, 1)), np.zeros((1, 1)))
        assert g.variances[0, 0] < 0.0
        assert g.variances[1, 0] > 0.0
