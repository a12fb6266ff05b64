import math

import numpy as np
import pytest

from privmass.accountant import (
    DEFAULT_ORDERS,
    AccountantLedger,
    CalibrationError,
    DpSgdConfig,
    EmptyLedgerError,
    PrivacyBudget,
    accumulate_rdp,
    calibrate_sigma,
    epsilon_at_delta,
    group_privacy,
    rdp_subsampled_gaussian,
    spent_epsilon,
)
from oracles import epsilon_oracle, rdp_per_step_oracle


class TestPerStepBound:
    def test_no_subsampling_closed_form(self):
        for alpha in DEFAULT_ORDERS:
            for sigma in (0.5, 1.0, 2.0, 7.5):
                assert rdp_subsampled_gaussian(1.0, sigma, alpha) == alpha / (2 * sigma * sigma)

    def test_zero_rate_is_free(self):
        assert rdp_subsampled_gaussian(0.0, 1.0, 2.0) == 0.0

    def test_matches_high_precision_oracle(self):
        for q in (0.01, 0.1, 0.5):
            for sigma in (0.8, 1.5, 4.0):
                for alpha in (2.0, 3.0, 17.0, 64.0, 1.5):
                    got = rdp_subsampled_gaussian(q, sigma, alpha)
                    want = rdp_per_step_oracle(q, sigma, alpha)
                    assert got == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            rdp_subsampled_gaussian(0.5, -1.0, 2.0)
        with pytest.raises(ValueError):
            rdp_subsampled_gaussian(0.5, 1.0, 1.0)
        with pytest.raises(ValueError):
            rdp_subsampled_gaussian(1.5, 1.0, 2.0)


class TestLedger:
    def test_zero_steps_is_identity(self):
        ledger = accumulate_rdp(AccountantLedger(), 0.1, 1.0, 50)
        same = accumulate_rdp(ledger, 0.1, 1.0, 0)
        np.testing.assert_array_equal(ledger.rdp_values, same.rdp_values)
        assert same.event_log == ledger.event_log

    def test_additivity_of_composition(self):
        two = accumulate_rdp(accumulate_rdp(AccountantLedger(), 0.2, 1.3, 50), 0.2, 1.3, 50)
        one = accumulate_rdp(AccountantLedger(), 0.2, 1.3, 100)
        np.testing.assert_allclose(two.rdp_values, one.rdp_values, rtol=1e-12)
        assert two.total_steps == one.total_steps == 100

    def test_input_ledger_untouched(self):
        base = AccountantLedger()
        accumulate_rdp(base, 0.1, 1.0, 10)
        assert base.total_steps == 0
        assert float(base.rdp_values.sum()) == 0.0

    def test_values_nonnegative_and_nondecreasing(self):
        ledger = AccountantLedger()
        prev = ledger.rdp_values.copy()
        for _ in range(4):
            ledger = accumulate_rdp(ledger, 0.3, 2.0, 7)
            assert (ledger.rdp_values >= prev).all()
            prev = ledger.rdp_values.copy()

    def test_serialization_roundtrip(self):
        ledger = accumulate_rdp(AccountantLedger(), 0.25, 1.1, 12)
        back = AccountantLedger.from_dict(ledger.to_dict())
        np.testing.assert_array_equal(back.rdp_values, ledger.rdp_values)
        assert back.event_log == ledger.event_log

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            accumulate_rdp(AccountantLedger(), 0.1, 0.0, 5)


class TestConversion:
    def test_matches_independent_oracle(self):
        ledger = accumulate_rdp(AccountantLedger(), 1.0, 1.0, 1)
        eps, order = epsilon_at_delta(ledger, 1e-5)
        want_eps, want_order = epsilon_oracle(1.0, 1.0, 1, 1e-5, DEFAULT_ORDERS)
        assert eps == pytest.approx(want_eps, abs=1e-6)
        assert order == want_order

    def test_huge_noise_spends_almost_nothing(self):
        # the conversion term log(1/delta)/(alpha - 1) floors the spend at
        # ~0.045 for the default grid (max order 256), however large sigma is
        eps, order = spent_epsilon(1.0, 1e6, 1, 1e-5)
        assert eps < 0.05
        assert order == max(DEFAULT_ORDERS)
        rdp_part = rdp_subsampled_gaussian(1.0, 1e6, order)
        assert rdp_part < 1e-9  # the mechanism itself contributes nothing

    def test_monotone_in_steps(self):
        e1, _ = spent_epsilon(0.2, 1.2, 100, 1e-4)
        e2, _ = spent_epsilon(0.2, 1.2, 200, 1e-4)
        assert e2 > e1

    def test_monotone_in_sigma_and_delta(self):
        lo_noise, _ = spent_epsilon(0.2, 1.0, 100, 1e-4)
        hi_noise, _ = spent_epsilon(0.2, 2.0, 100, 1e-4)
        assert hi_noise < lo_noise
        tight_delta, _ = spent_epsilon(0.2, 1.0, 100, 1e-6)
        assert tight_delta > lo_noise

    def test_empty_ledger_rejected(self):
        with pytest.raises(EmptyLedgerError):
            epsilon_at_delta(AccountantLedger(), 1e-4)

    def test_delta_validated(self):
        ledger = accumulate_rdp(AccountantLedger(), 0.5, 1.0, 1)
        with pytest.raises(ValueError):
            epsilon_at_delta(ledger, 0.0)


class TestCalibration:
    Q, T = 0.25, 120

    @pytest.mark.parametrize("target", [1.0, 6.0, 12.0, 20.0, 60.0])
    def test_paper_budgets_round_trip(self, target):
        sigma = calibrate_sigma(PrivacyBudget(target, 1e-4), self.Q, self.T)
        eps, _ = spent_epsilon(self.Q, sigma, self.T, 1e-4)
        assert 0.98 * target <= eps <= target

    def test_sigma_strictly_decreasing_in_epsilon(self):
        sigmas = [
            calibrate_sigma(PrivacyBudget(e, 1e-4), self.Q, self.T)
            for e in (1.0, 6.0, 12.0, 20.0, 60.0)
        ]
        assert all(a > b for a, b in zip(sigmas, sigmas[1:]))

    def test_infeasible_target(self):
        with pytest.raises(CalibrationError):
            calibrate_sigma(PrivacyBudget(1e12, 1e-4), 1.0, 10_000)

    def test_zero_steps_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_sigma(PrivacyBudget(6.0, 1e-4), 0.5, 0)


class TestGroupPrivacy:
    def test_group_of_one(self):
        budget = PrivacyBudget(2.0, 1e-4)
        assert group_privacy(budget, 1) == budget

    def test_k2_formula(self):
        out = group_privacy(PrivacyBudget(1.0, 1e-4), 2)
        assert out.epsilon == 2.0
        assert out.delta == pytest.approx(2 * math.e * 1e-4, rel=1e-12)

    def test_epsilon_scales_linearly(self):
        out = group_privacy(PrivacyBudget(0.7, 1e-5), 3)
        assert out.epsilon == pytest.approx(3 * 0.7, rel=1e-12)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            group_privacy(PrivacyBudget(1.0, 1e-4), 0)


class TestConfigTypes:
    def test_budget_invariants(self):
        with pytest.raises(ValueError):
            PrivacyBudget(0.0, 1e-4)
        with pytest.raises(ValueError):
            PrivacyBudget(1.0, 1.0)

    def test_dpsgd_config_invariants(self):
        with pytest.raises(ValueError):
            DpSgdConfig(clip_norm=0, noise_multiplier=1, sampling_rate=0.5)
        with pytest.raises(ValueError):
            DpSgdConfig(clip_norm=1, noise_multiplier=1, sampling_rate=1.5)
