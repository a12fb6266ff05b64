import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from privmass.accountant import AccountantLedger, DpSgdConfig, accumulate_rdp, epsilon_at_delta
from privmass.dpsgd import (
    NonFiniteGradientError,
    clip_per_sample,
    dp_sgd_step,
    noisy_aggregate,
    poisson_sample,
)


class TestClipping:
    def test_large_vector_scaled_to_norm_c(self):
        g = np.full(100, 1.0)  # norm 10
        (out,) = clip_per_sample([g], 1.0)
        assert np.linalg.norm(out) == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(out / np.linalg.norm(out), g / np.linalg.norm(g))

    def test_small_vector_untouched(self):
        g = np.array([0.3, 0.4])  # norm 0.5
        (out,) = clip_per_sample([g], 1.0)
        np.testing.assert_array_equal(out, g)

    def test_zero_vector_passes_through(self):
        (out,) = clip_per_sample([np.zeros(5)], 2.0)
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_bruteforce_norm_oracle(self):
        rng = np.random.default_rng(0)
        grads = [rng.normal(0, 3, size=20) for _ in range(100)]
        clipped = clip_per_sample(grads, 1.5)
        for g, c in zip(grads, clipped):
            norm = float(np.sqrt(sum(float(x) * float(x) for x in g)))  # scalar-scan oracle
            assert np.linalg.norm(c) <= 1.5 + 1e-12
            if norm <= 1.5:
                np.testing.assert_array_equal(c, g)

    @given(
        hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)),
        st.floats(0.1, 10.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_norm_bound_property(self, g, c):
        (out,) = clip_per_sample([g], c)
        assert np.linalg.norm(out) <= c * (1 + 1e-12)

    def test_invalid_clip_norm(self):
        with pytest.raises(ValueError):
            clip_per_sample([np.ones(3)], 0.0)


class TestNoisyAggregate:
    def test_noiseless_limit_is_mean(self):
        rng = np.random.default_rng(1)
        g1, g2 = np.array([1.0, 2.0]), np.array([3.0, 4.0])
        out = noisy_aggregate([g1, g2], 1e-12, 1.0, 2.0, rng)
        np.testing.assert_allclose(out, (g1 + g2) / 2.0, atol=1e-9)

    def test_empty_batch_is_pure_noise(self):
        rng = np.random.default_rng(2)
        out = noisy_aggregate([], 1.0, 2.0, 8.0, rng, dim=3)
        assert out.shape == (3,)
        rng2 = np.random.default_rng(2)
        np.testing.assert_array_equal(out, rng2.normal(0, 2.0, size=3) / 8.0)

    def test_empty_batch_needs_dim(self):
        with pytest.raises(ValueError):
            noisy_aggregate([], 1.0, 1.0, 4.0, np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        g = [np.ones(4)]
        a = noisy_aggregate(g, 0.5, 1.0, 3.0, np.random.default_rng(9))
        b = noisy_aggregate(g, 0.5, 1.0, 3.0, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_variance_monte_carlo(self):
        sigma, c, expected_batch = 0.8, 1.3, 5.0
        grads = [np.array([0.2, -0.4]), np.array([0.1, 0.3])]
        rng = np.random.default_rng(123)
        draws = np.stack(
            [noisy_aggregate(grads, sigma, c, expected_batch, rng) for _ in range(100_000)]
        )
        target = (sigma * c / expected_batch) ** 2
        sample_var = draws.var(axis=0)
        np.testing.assert_allclose(sample_var, target, rtol=0.03)

    def test_invalid_expected_batch(self):
        with pytest.raises(ValueError):
            noisy_aggregate([np.ones(2)], 1.0, 1.0, 0.0, np.random.default_rng(0))


class TestPoisson:
    def test_rate_one_takes_all(self):
        np.testing.assert_array_equal(
            poisson_sample(7, 1.0, np.random.default_rng(0)), np.arange(7)
        )

    def test_inclusion_frequency(self):
        rng = np.random.default_rng(5)
        hits = sum(len(poisson_sample(100, 0.3, rng)) for _ in range(2000))
        assert hits / (100 * 2000) == pytest.approx(0.3, abs=0.01)


class TestDpSgdStep:
    @staticmethod
    def _quadratic_grad(params, sample):
        x, y = sample
        pred = params @ x
        return 2 * (pred - y) * x

    def _toy(self, n=2000, d=5, seed=0):
        rng = np.random.default_rng(seed)
        xs = rng.normal(size=(n, d))
        true = rng.normal(size=d)
        ys = xs @ true
        return [(xs[i], ys[i]) for i in range(n)], rng.normal(size=d)

    def test_degenerate_noise_matches_plain_sgd(self):
        batch, params = self._toy()
        config = DpSgdConfig(clip_norm=1e9, noise_multiplier=1e-12, sampling_rate=1.0)
        new, _ = dp_sgd_step(
            params,
            batch,
            self._quadratic_grad,
            config,
            AccountantLedger(),
            np.random.default_rng(3),
            lr=0.05,
        )
        mean_grad = np.mean([self._quadratic_grad(params, s) for s in batch], axis=0)
        plain = params - 0.05 * mean_grad
        rel = np.linalg.norm(new - plain) / np.linalg.norm(plain - params)
        assert rel <= 1e-6

    def test_ledger_advances_one_event(self):
        batch, params = self._toy(n=16)
        config = DpSgdConfig(clip_norm=1.0, noise_multiplier=1.0, sampling_rate=0.5)
        _, ledger = dp_sgd_step(
            params, batch, self._quadratic_grad, config, AccountantLedger(),
            np.random.default_rng(0), lr=0.1, expected_batch=8.0,
        )
        assert ledger.total_steps == 1
        assert ledger.event_log == [(0.5, 1.0, 1)]

    def test_50_steps_spend_matches_direct_accounting(self):
        data, params = self._toy(n=200)
        config = DpSgdConfig(clip_norm=1.0, noise_multiplier=1.2, sampling_rate=0.1)
        ledger = AccountantLedger()
        rng = np.random.default_rng(11)
        for step in range(50):
            idx = poisson_sample(len(data), 0.1, np.random.default_rng([7, step]))
            batch = [data[i] for i in idx]
            params, ledger = dp_sgd_step(
                params, batch, self._quadratic_grad, config, ledger, rng,
                lr=0.01, expected_batch=0.1 * len(data),
            )
        direct = accumulate_rdp(AccountantLedger(), 0.1, 1.2, 50)
        eps_steps, order_steps = epsilon_at_delta(ledger, 1e-4)
        eps_direct, order_direct = epsilon_at_delta(direct, 1e-4)
        assert eps_steps == pytest.approx(eps_direct, rel=1e-12)
        assert order_steps == order_direct

    def test_nonfinite_gradient_aborts(self):
        def bad_grad(params, sample):
            return np.array([np.nan, 1.0])

        with pytest.raises(NonFiniteGradientError):
            dp_sgd_step(
                np.zeros(2), [0], bad_grad,
                DpSgdConfig(clip_norm=1.0, noise_multiplier=1.0, sampling_rate=1.0),
                AccountantLedger(), np.random.default_rng(0),
            )
