import numpy as np
import pytest

from privmass.frechet import (
    GaussianSummary,
    InsufficientSamplesError,
    fit_gaussian,
    frechet_distance,
)
from oracles import frechet_oracle


def random_summary(rng, d):
    mu = rng.normal(size=d)
    a = rng.normal(size=(d, d))
    sigma = a @ a.T + 0.5 * np.eye(d)  # well-conditioned PSD
    return GaussianSummary(mu=mu, sigma=sigma)


class TestFitGaussian:
    def test_identical_rows_zero_covariance(self):
        summary = fit_gaussian(np.array([[1.0, 2.0], [1.0, 2.0]]))
        np.testing.assert_array_equal(summary.sigma, np.zeros((2, 2)))

    def test_hand_analytic_unbiased(self):
        summary = fit_gaussian(np.array([[0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_allclose(summary.mu, [1.0, 1.0])
        np.testing.assert_allclose(summary.sigma, [[2.0, 2.0], [2.0, 2.0]])

    def test_monte_carlo_concentration(self):
        rng = np.random.default_rng(0)
        summary = fit_gaussian(rng.standard_normal((10_000, 3)))
        assert np.abs(summary.mu).max() < 0.05
        assert np.abs(summary.sigma - np.eye(3)).max() < 0.1

    def test_single_row_rejected(self):
        with pytest.raises(InsufficientSamplesError):
            fit_gaussian(np.array([[1.0, 2.0]]))


class TestFrechetDistance:
    def test_self_distance_zero(self):
        s = random_summary(np.random.default_rng(1), 4)
        assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-9)

    def test_1d_closed_form(self):
        a = GaussianSummary(mu=np.array([0.0]), sigma=np.array([[1.0]]))
        b = GaussianSummary(mu=np.array([3.0]), sigma=np.array([[1.0]]))
        assert frechet_distance(a, b) == pytest.approx(9.0, abs=1e-9)

    def test_diagonal_closed_form(self):
        a = GaussianSummary(mu=np.zeros(2), sigma=np.diag([1.0, 4.0]))
        b = GaussianSummary(mu=np.zeros(2), sigma=np.diag([1.0, 1.0]))
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_matches_schur_oracle_on_random_psd_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            d = int(rng.integers(1, 6))
            a, b = random_summary(rng, d), random_summary(rng, d)
            got = frechet_distance(a, b)
            want = frechet_oracle(a.mu, a.sigma, b.mu, b.sigma)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a, b = random_summary(rng, 3), random_summary(rng, 3)
            assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-9)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            frechet_distance(random_summary(rng, 2), random_summary(rng, 3))

    def test_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a, b = random_summary(rng, 5), random_summary(rng, 5)
            assert frechet_distance(a, b) >= 0.0


class TestGaussianSummaryInvariants:
    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            GaussianSummary(mu=np.zeros(2), sigma=np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_negative_definite_rejected(self):
        with pytest.raises(ValueError):
            GaussianSummary(mu=np.zeros(2), sigma=-np.eye(2))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            GaussianSummary(mu=np.zeros(3), sigma=np.eye(2))
