"""Forecasting tests: smoothing behavior on corrupted series, exponential-fit
parameter recovery against synthetic generators, and forecast fallbacks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autolrs.forecast import (
    ExponentialFit,
    LossSeries,
    SmoothingParams,
    evaluate_candidate,
    fit_exponential,
    forecast_loss,
    spline_smooth,
)
from autolrs.forecast import _inner_solve


def exp_series(a, b, c, steps, noise_std=0.0, seed=0, horizon=None):
    steps = np.asarray(steps, dtype=np.int64)
    y = a * np.exp(b * steps.astype(float)) + c
    if noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_std, size=len(steps))
    horizon = int(horizon if horizon is not None else steps[-1] * 10)
    return LossSeries(steps, y, horizon, int(steps[-1]))


def dip_rise_decay(with_spikes=True):
    """Non-monotone early window over a decaying exponential, plus spikes."""
    t = np.arange(1, 101)
    base = 2.0 * np.exp(-0.01 * t) + 0.5
    bump = 0.8 * np.exp(-(((t - 20.0) / 8.0) ** 2))
    y = base + bump
    spike_steps = [10, 25, 40]
    if with_spikes:
        for s in spike_steps:
            y[s - 1] += 2.0
    return LossSeries(t, y, 1000, 100), spike_steps, base


class TestLossSeries:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossSeries(np.array([2, 1]), np.array([1.0, 2.0]), 100, 10)
        with pytest.raises(ValueError):
            LossSeries(np.array([1, 2]), np.array([1.0, np.inf]), 100, 10)
        with pytest.raises(ValueError):
            LossSeries(np.array([-1, 2]), np.array([1.0, 2.0]), 100, 10)
        with pytest.raises(ValueError):
            LossSeries(np.array([1, 2]), np.array([1.0, 2.0]), 10, 100)
        with pytest.raises(ValueError):
            LossSeries(np.zeros(0, dtype=np.int64), np.zeros(0), 100, 10)

    def test_from_points(self):
        s = LossSeries.from_points([(1, 2.0), (5, 1.0)], 100, 10)
        assert len(s) == 2
        assert s.steps.tolist() == [1, 5]


class TestSplineSmoothing:
    def test_requires_enough_points(self):
        s = exp_series(2.0, -0.01, 0.5, np.arange(1, 6))
        with pytest.raises(ValueError):
            spline_smooth(s)

    def test_quadratic_series_is_reproduced(self):
        t = np.arange(1, 61)
        y = 0.0005 * t.astype(float) ** 2 - 0.08 * t + 3.5
        series = LossSeries(t, y, 600, 60)
        result = spline_smooth(series)
        original = dict(zip(t.tolist(), y.tolist()))
        for step, val in zip(result.series.steps, result.series.losses):
            assert val == pytest.approx(original[int(step)], abs=1e-9)

    def test_spikes_removed_and_bump_reduced(self):
        spiky, spike_steps, base = dip_rise_decay()
        result = spline_smooth(spiky)
        assert set(spike_steps) <= set(result.removed_steps.tolist())
        # the final spline tracks the underlying decay better than the
        # corrupted data does, across the whole window
        t = spiky.steps.astype(float)
        raw_dev = float(np.abs(spiky.losses - base).sum())
        smooth_dev = float(np.abs(result.spline(t) - base).sum())
        assert smooth_dev < raw_dev

    def test_late_points_are_protected(self):
        series, _, _ = dip_rise_decay()
        # corrupt a late point heavily; it is past tau'/2 and must survive
        y = series.losses.copy()
        y[79] += 5.0
        corrupted = LossSeries(series.steps, y, 1000, 100)
        result = spline_smooth(corrupted)
        assert np.all(result.removed_steps <= 50)
        assert 80 in result.series.steps

    def test_removal_budget(self):
        series, _, _ = dip_rise_decay()
        params = SmoothingParams()
        result = spline_smooth(series, params)
        cap = params.iterations * math.ceil(params.drop_fraction * len(series))
        assert len(result.removed_steps) <= cap
        assert len(result.series) + len(result.removed_steps) == len(series)

    def test_zero_drop_fraction_keeps_all_points(self):
        series, _, _ = dip_rise_decay()
        result = spline_smooth(series, SmoothingParams(drop_fraction=0.0))
        assert len(result.series) == len(series)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            SmoothingParams(iterations=0)
        with pytest.raises(ValueError):
            SmoothingParams(drop_fraction=1.0)
        with pytest.raises(ValueError):
            SmoothingParams(knot_spacing=0)


class TestExponentialFit:
    def test_noiseless_recovery(self):
        series = exp_series(2.0, -0.01, 0.5, np.arange(1, 101))
        fit = fit_exponential(series)
        assert not fit.degenerate
        assert fit.a == pytest.approx(2.0, rel=1e-3)
        assert fit.b == pytest.approx(-0.01, rel=1e-3)
        assert fit.c == pytest.approx(0.5, rel=1e-3)
        true_at_1000 = 2.0 * math.exp(-10.0) + 0.5
        assert forecast_loss(fit, 1000) == pytest.approx(true_at_1000, rel=1e-2)

    def test_noisy_offset_recovery_monte_carlo(self):
        c_errors, b_errors = [], []
        for seed in range(100):
            series = exp_series(2.0, -0.01, 0.5, np.arange(1, 101), noise_std=0.01, seed=seed)
            fit = fit_exponential(series)
            c_errors.append(abs(fit.c - 0.5))
            b_errors.append(abs(fit.b - (-0.01)) / 0.01)
        assert np.percentile(c_errors, 95) <= 0.05
        assert np.percentile(b_errors, 95) <= 0.30

    def test_constant_series_degenerates(self):
        series = LossSeries(np.arange(1, 21), np.full(20, 1.25), 200, 20)
        fit = fit_exponential(series)
        assert fit.degenerate
        assert fit.c == 1.25
        assert fit.sse == 0.0
        assert forecast_loss(fit, 999) == 1.25

    def test_returned_sse_not_above_any_start(self):
        series = exp_series(1.5, -0.05, 0.2, np.arange(1, 101), noise_std=0.02, seed=3)
        fit = fit_exponential(series)
        assert fit.start_sse
        assert all(fit.sse <= s + 1e-12 for s in fit.start_sse)

    def test_inner_solution_satisfies_normal_equations(self):
        series = exp_series(1.5, -0.02, 0.7, np.arange(1, 101), noise_std=0.05, seed=1)
        fit = fit_exponential(series)
        t = series.steps.astype(float)
        u = np.exp(fit.b * t)
        resid = fit.a * u + fit.c - series.losses
        scale = max(float(np.abs(series.losses).max()), 1.0) * len(t)
        assert abs(float(resid @ u)) <= 1e-9 * scale
        assert abs(float(resid.sum())) <= 1e-9 * scale

    def test_descent_direction_matches_numerical_gradient(self):
        series = exp_series(2.0, -0.01, 0.5, np.arange(1, 101), noise_std=0.01, seed=5)
        t = series.steps.astype(float)
        y = series.losses

        def reduced_objective(bp):
            return _inner_solve(t, y, -math.exp(bp))[2]

        for bp in (-5.5, -4.0, -2.0):
            a, c, sse, resid, u = _inner_solve(t, y, -math.exp(bp))
            analytic = 2.0 * a * (-math.exp(bp)) * float((resid * t) @ u)
            h = 1e-6
            numeric = (reduced_objective(bp + h) - reduced_objective(bp - h)) / (2 * h)
            if abs(numeric) > 1e-8:
                assert math.copysign(1.0, analytic) == math.copysign(1.0, numeric)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            fit_exponential(LossSeries(np.array([1, 2, 3]), np.array([3.0, 2.0, 1.0]), 100, 10))

    def test_non_degenerate_requires_negative_rate(self):
        with pytest.raises(ValueError):
            ExponentialFit(a=1.0, b=0.1, c=0.0, sse=0.0)


class TestForecastLoss:
    def test_frozen_values(self):
        fit = ExponentialFit(a=2.0, b=-0.01, c=0.5, sse=0.0)
        assert forecast_loss(fit, 0) == 2.5
        assert forecast_loss(fit, 1000) == pytest.approx(0.5000908, abs=1e-7)

    def test_monotone_decay_toward_offset(self):
        fit = ExponentialFit(a=2.0, b=-0.01, c=0.5, sse=0.0)
        values = [forecast_loss(fit, s) for s in (0, 10, 100, 1000, 100000)]
        assert all(x > y for x, y in zip(values, values[1:]))
        assert values[-1] == pytest.approx(0.5, abs=1e-6)

    def test_rejects_negative_step(self):
        fit = ExponentialFit(a=1.0, b=-0.1, c=0.0, sse=0.0)
        with pytest.raises(ValueError):
            forecast_loss(fit, -1)


class TestEvaluateCandidate:
    def test_clean_exponential_within_one_percent(self):
        series = exp_series(2.0, -0.01, 0.5, np.arange(1, 101), horizon=1000)
        forecast = evaluate_candidate(series)
        true_val = 2.0 * math.exp(-0.01 * 1000) + 0.5
        assert forecast == pytest.approx(true_val, rel=1e-2)

    def test_beats_last_value_extrapolation(self):
        for b in (-0.005, -0.01, -0.02, -0.05):
            series = exp_series(2.0, b, 0.5, np.arange(1, 101), horizon=1000)
            true_val = 2.0 * math.exp(b * 1000) + 0.5
            forecast = evaluate_candidate(series)
            naive = float(series.losses[-1])
            assert abs(forecast - true_val) < abs(naive - true_val)

    def test_net_increasing_series_returns_last_value(self):
        t = np.arange(1, 41)
        y = 1.0 + 0.01 * t.astype(float)
        series = LossSeries(t, y, 400, 40)
        forecast = evaluate_candidate(series)
        smoothed = spline_smooth(series).series
        assert forecast == float(smoothed.losses[-1])

    def test_short_series_skips_smoothing(self):
        series = exp_series(2.0, -0.05, 0.5, np.arange(1, 8), horizon=70)
        forecast = evaluate_candidate(series)
        assert np.isfinite(forecast)
        true_val = 2.0 * math.exp(-0.05 * 70) + 0.5
        assert forecast == pytest.approx(true_val, rel=0.05)

    def test_constant_series_returns_constant(self):
        series = LossSeries(np.arange(1, 31), np.full(30, 0.75), 300, 30)
        # spline round-trip may wiggle the constant by an ulp
        assert evaluate_candidate(series) == pytest.approx(0.75, abs=1e-9)
        short = LossSeries(np.arange(1, 7), np.full(6, 0.75), 60, 6)
        assert evaluate_candidate(short) == 0.75

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(0.0, 100.0, allow_nan=False), min_size=1, max_size=60),
        st.integers(1, 50),
    )
    def test_always_finite_on_valid_series(self, values, spacing):
        steps = np.arange(1, len(values) + 1) * spacing
        series = LossSeries(steps, np.array(values), int(steps[-1]) * 10, int(steps[-1]))
        assert np.isfinite(evaluate_candidate(series))

    def test_smoothing_improves_corrupted_forecast(self):
        spiky, _, base = dip_rise_decay()
        true_val = 2.0 * math.exp(-0.01 * 1000) + 0.5
        with_smoothing = evaluate_candidate(spiky)
        raw_fit = fit_exponential(spiky)
        without = forecast_loss(raw_fit, 1000)
        assert abs(with_smoothing - true_val) < abs(without - true_val)
