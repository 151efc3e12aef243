import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tippingmarkets.intrinsic import (
    IntrinsicConfig,
    IntrinsicSeries,
    PoleError,
    annual_to_step,
    backdated_window_values,
    forward_correct,
    intrinsic_backdated,
    intrinsic_return,
    intrinsic_series,
    ratio_series,
    returns_series,
)
from tests.conftest import flat_fundamentals


def brute_force_value(fcf, wacc, fcf_next, long_run, growth):
    """Term-by-term discounting oracle: explicit loops, no shortcuts."""
    total = 0.0
    for j in range(len(fcf)):
        disc = 1.0
        for k in range(j + 1):
            disc *= 1.0 + wacc[k]
        total += fcf[j] / disc
    disc = 1.0
    for k in range(len(fcf)):
        disc *= 1.0 + wacc[k]
    return total + fcf_next / (disc * (long_run - growth))


class TestBackdated:
    def test_zero_cash_flows(self):
        assert intrinsic_backdated(np.zeros(12), np.full(12, 0.05), 0.0, 0.07, 0.017) == 0.0

    def test_one_step_window_hand_value(self):
        # oracle: 10/1.1 + 10.17/(1.1 * 0.053), summed term by term
        oracle = brute_force_value([10.0], [0.1], 10.17, 0.07, 0.017)
        assert oracle == pytest.approx(183.53344768439104, rel=1e-12)
        value = intrinsic_backdated(np.array([10.0]), np.array([0.1]), 10.17, 0.07, 0.017)
        assert value == pytest.approx(oracle, rel=1e-12)

    def test_sixty_step_window_vs_brute_force(self):
        fcf = np.full(60, 2.5)
        wacc = np.full(60, 0.005)
        value = intrinsic_backdated(fcf, wacc, 2.5, 0.006, 0.001)
        oracle = brute_force_value(fcf, wacc, 2.5, 0.006, 0.001)
        assert value == pytest.approx(oracle, rel=1e-10)

    def test_random_windows_vs_brute_force(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(1, 40))
            fcf = rng.uniform(0.5, 5.0, n)
            wacc = rng.uniform(0.001, 0.02, n)
            value = intrinsic_backdated(fcf, wacc, 2.0, 0.01, 0.002)
            assert value == pytest.approx(brute_force_value(fcf, wacc, 2.0, 0.01, 0.002), rel=1e-10)

    def test_gordon_degeneration(self):
        # a window carrying no cash flow leaves only the continuing
        # value discounted through it: Gordon value / (1 + wacc)
        value = intrinsic_backdated(np.array([0.0]), np.array([0.04]), 8.0, 0.06, 0.01)
        gordon = 8.0 / (0.06 - 0.01)
        assert value == pytest.approx(gordon / 1.04, rel=1e-14)

    @given(st.floats(0.1, 10.0), st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_homogeneous_in_cash_flows(self, scale, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 30))
        fcf = rng.uniform(0.5, 5.0, n)
        wacc = rng.uniform(0.0, 0.02, n)
        base = intrinsic_backdated(fcf, wacc, 2.0, 0.01, 0.002)
        scaled = intrinsic_backdated(fcf * scale, wacc, 2.0 * scale, 0.01, 0.002)
        assert scaled == pytest.approx(base * scale, rel=1e-12)

    def test_positive_output_for_positive_flows(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            n = int(rng.integers(1, 30))
            value = intrinsic_backdated(
                rng.uniform(0.1, 5.0, n), rng.uniform(0.0, 0.05, n), 1.0, 0.02, 0.0
            )
            assert value > 0

    def test_pole_error(self):
        with pytest.raises(PoleError):
            intrinsic_backdated(np.ones(3), np.full(3, 0.01), 1.0, 0.01, 0.02)

    def test_empty_window(self):
        with pytest.raises(ValueError, match="at least one"):
            intrinsic_backdated(np.array([]), np.array([]), 1.0, 0.05, 0.0)


class TestForwardCorrect:
    def test_zero_growth_identity(self):
        assert forward_correct(123.4, 0.0, 5) == 123.4

    def test_growth_factor_from_medians(self):
        assert forward_correct(1.0, 0.017, 5) == pytest.approx(1.0879395490248565, rel=1e-14)

    def test_negative_growth_halves(self):
        assert forward_correct(100.0, -0.5, 1) == 50.0

    @given(st.floats(-0.2, 0.2), st.integers(0, 10), st.integers(0, 10))
    @settings(max_examples=50, deadline=None)
    def test_composition(self, growth, t1, t2):
        one = forward_correct(forward_correct(10.0, growth, t1), growth, t2)
        both = forward_correct(10.0, growth, t1 + t2)
        assert one == pytest.approx(both, rel=1e-12)

    def test_requires_positive_value(self):
        with pytest.raises(ValueError):
            forward_correct(0.0, 0.01, 5)


class TestIntrinsicSeries:
    def test_constant_inputs_give_constant_uncorrected_series(self):
        fund = flat_fundamentals(months=200, wacc=0.07, growth=0.017)
        cfg = IntrinsicConfig(long_run_wacc=0.07)
        series = intrinsic_series(fund, cfg, corrected=False)
        assert len(series) == 200 - 60 + 1
        assert np.allclose(series.values, series.values[0], rtol=1e-12)

    def test_uncorrected_equals_raw_window_values(self):
        fund = flat_fundamentals(months=140)
        cfg = IntrinsicConfig(long_run_wacc=0.07)
        series = intrinsic_series(fund, cfg, corrected=False)
        raw = backdated_window_values(fund.fcf, fund.wacc, cfg)
        assert np.array_equal(series.values, raw)

    def test_corrected_is_uncorrected_times_growth_factor(self):
        fund = flat_fundamentals(months=140)
        cfg = IntrinsicConfig(long_run_wacc=0.07)
        corrected = intrinsic_series(fund, cfg, corrected=True)
        uncorrected = intrinsic_series(fund, cfg, corrected=False)
        factor = (1 + cfg.growth) ** cfg.window_years
        assert np.allclose(corrected.values, uncorrected.values * factor, rtol=1e-14)

    def test_dates_are_window_ends(self):
        fund = flat_fundamentals(months=80)
        cfg = IntrinsicConfig(long_run_wacc=0.07)
        series = intrinsic_series(fund, cfg)
        assert series.months[0] == fund.months[59]
        assert series.months[-1] == fund.months[-1]

    def test_band_brackets_values(self):
        rng = np.random.default_rng(12)
        fund = flat_fundamentals(months=240)
        fund.real_earnings = fund.real_earnings * rng.uniform(0.8, 1.2, 240)
        fund.fcf = fund.real_earnings * (1 - fund.growth / fund.roic)
        fund.wacc = fund.wacc * rng.uniform(0.9, 1.1, 240)
        series = intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.07))
        assert np.all(series.ci_low <= series.values)
        assert np.all(series.ci_high >= series.values)
        assert np.all(series.values > 0)

    def test_span_too_short(self):
        fund = flat_fundamentals(months=59)
        with pytest.raises(ValueError, match="at least"):
            intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.07))

    def test_pole_propagates(self):
        fund = flat_fundamentals(months=80, wacc=0.01)
        with pytest.raises(PoleError):
            intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.01))

    def test_median_wacc_default(self):
        fund = flat_fundamentals(months=80, wacc=0.07)
        series = intrinsic_series(fund, IntrinsicConfig())  # long_run_wacc=None -> median
        explicit = intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.07))
        assert np.array_equal(series.values, explicit.values)

    def test_serialization_roundtrip(self):
        fund = flat_fundamentals(months=80)
        series = intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.07))
        again = IntrinsicSeries.from_json(series.to_json())
        assert np.array_equal(again.months, series.months)
        assert np.array_equal(again.values, series.values)
        assert again.corrected == series.corrected


class TestRatioAndReturns:
    def test_ratio_identity(self):
        fund = flat_fundamentals(months=80)
        series = intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.07))
        months, ratio = ratio_series(series.months, series.values, series)
        assert np.allclose(ratio, 1.0)
        assert len(months) == len(series)

    def test_ratio_factor_two(self):
        fund = flat_fundamentals(months=80)
        series = intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.07))
        _, ratio = ratio_series(series.months, 2.0 * series.values, series)
        assert np.allclose(ratio, 2.0)

    def test_ratio_empty_intersection(self):
        fund = flat_fundamentals(months=80)
        series = intrinsic_series(fund, IntrinsicConfig(long_run_wacc=0.07))
        with pytest.raises(ValueError, match="overlap"):
            ratio_series(series.months + 10_000, series.values, series)

    def test_intrinsic_return_constant(self):
        assert intrinsic_return(np.full(5, 7.0), 3) == 0.0

    def test_intrinsic_return_two_percent(self):
        assert intrinsic_return(np.array([100.0, 102.0]), 1) == pytest.approx(0.02)

    def test_intrinsic_return_matches_oracle(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(50, 150, 30)
        for t in range(1, 30):
            oracle = (values[t] - values[t - 1]) / values[t - 1]
            assert intrinsic_return(values, t) == pytest.approx(oracle, rel=1e-15)

    def test_intrinsic_return_rejects_t0(self):
        with pytest.raises(ValueError):
            intrinsic_return(np.array([1.0, 2.0]), 0)

    def test_returns_series_matches_pointwise(self):
        rng = np.random.default_rng(6)
        values = rng.uniform(50, 150, 30)
        series = returns_series(values)
        assert series[0] == 0.0
        for t in range(1, 30):
            assert series[t] == pytest.approx(intrinsic_return(values, t), rel=1e-15)

    def test_annual_to_step_roundtrip(self):
        step = annual_to_step(0.07, 12)
        assert (1 + step) ** 12 == pytest.approx(1.07, rel=1e-14)
