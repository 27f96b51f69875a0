import numpy as np
import pytest

from cfbench.errors import DomainError
from cfbench.forecasting import (
    HOLT_GRID,
    ArForecaster,
    DriftForecaster,
    Forecast,
    ForecastRequest,
    HoltForecaster,
    PersistenceForecaster,
)

ALL_FORECASTERS = [
    PersistenceForecaster(),
    DriftForecaster(),
    HoltForecaster(),
    ArForecaster(order=3),
]


def rng(seed=0):
    return np.random.default_rng(seed)


class TestRequestAndForecast:
    def test_request_validation(self):
        with pytest.raises(DomainError):
            ForecastRequest(context=np.array([]), horizon=2)
        with pytest.raises(DomainError):
            ForecastRequest(context=np.array([1.0]), horizon=0)
        with pytest.raises(DomainError):
            ForecastRequest(context=np.array([1.0]), horizon=1, n_samples=0)

    def test_point_is_pathwise_median(self):
        samples = np.array([[0.0, 5.0], [1.0, 1.0], [2.0, 3.0]])
        fc = Forecast.from_samples(samples)
        assert np.array_equal(fc.point, np.median(samples, axis=0))


class TestPersistence:
    def test_repeats_last_value(self):
        fc = PersistenceForecaster().forecast(ForecastRequest([1.0, 2.0, 3.0], 2), rng())
        assert np.array_equal(fc.point, [3.0, 3.0])

    def test_single_value_context(self):
        fc = PersistenceForecaster().forecast(ForecastRequest([0.0], 1), rng())
        assert np.array_equal(fc.point, [0.0])

    def test_zero_spread(self):
        fc = PersistenceForecaster().forecast(ForecastRequest([4.0, 7.0], 3, n_samples=5), rng())
        assert np.all(fc.samples == fc.samples[0])


class TestDrift:
    def test_continues_slope(self):
        fc = DriftForecaster().forecast(ForecastRequest([0.0, 1.0, 2.0], 3), rng())
        assert np.allclose(fc.point, [3.0, 4.0, 5.0])


class TestHolt:
    def test_exact_linear_trend(self):
        ctx = np.arange(1.0, 11.0)
        fc = HoltForecaster().forecast(ForecastRequest(ctx, 3, n_samples=4), rng())
        assert np.allclose(fc.point, [11.0, 12.0, 13.0], atol=1e-6)

    def test_constant_context(self):
        fc = HoltForecaster().forecast(ForecastRequest([5.0, 5.0, 5.0, 5.0], 2), rng())
        assert np.allclose(fc.point, [5.0, 5.0], atol=1e-9)

    def test_grid_choice_matches_bruteforce_sweep(self):
        gen = np.random.default_rng(5)
        ctx = 0.4 * np.arange(40.0) + gen.normal(0, 1.0, 40)
        model = HoltForecaster()
        alpha, beta, *_ = model.fit(ctx)

        # independent exhaustive sweep over the same grid
        best = None
        for a in HOLT_GRID:
            for b in HOLT_GRID:
                level, trend = ctx[0], ctx[1] - ctx[0]
                sse = 0.0
                for t in range(1, len(ctx)):
                    pred = level + trend
                    if t >= 2:
                        sse += (ctx[t] - pred) ** 2
                    prev = level
                    level = a * ctx[t] + (1 - a) * (level + trend)
                    trend = b * (level - prev) + (1 - b) * trend
                if best is None or sse < best[0]:
                    best = (sse, a, b)
        assert (alpha, beta) == (best[1], best[2])

    def test_too_short_context(self):
        with pytest.raises(DomainError):
            HoltForecaster().forecast(ForecastRequest([1.0, 2.0], 1), rng())


class TestAr:
    def test_geometric_series_recovers_half(self):
        model = ArForecaster(order=1)
        ctx = np.array([16.0, 8.0, 4.0, 2.0, 1.0])
        coef, residuals = model.fit(ctx)
        assert coef[1] == pytest.approx(0.5, abs=1e-9)
        assert abs(coef[0]) < 1e-9
        fc = model.forecast(ForecastRequest(ctx, 1), rng())
        assert fc.point[0] == pytest.approx(0.5, abs=1e-9)

    def test_constant_series_forecasts_constant(self):
        fc = ArForecaster(order=1).forecast(ForecastRequest([7.0, 7.0, 7.0, 7.0], 3), rng())
        assert np.allclose(fc.point, 7.0, atol=1e-9)

    def test_ar2_coefficient_recovery(self):
        # oracle: explicit normal-equations solve on the same synthetic series
        gen = np.random.default_rng(2)
        phi1, phi2 = 0.6, -0.2
        n = 500
        x = np.zeros(n)
        eps = gen.normal(0, 0.5, n)
        for t in range(2, n):
            x[t] = phi1 * x[t - 1] + phi2 * x[t - 2] + eps[t]
        model = ArForecaster(order=2)
        coef, _ = model.fit(x)
        assert coef[1] == pytest.approx(phi1, abs=0.05)
        assert coef[2] == pytest.approx(phi2, abs=0.05)

        design = np.column_stack([np.ones(n - 2), x[1:-1], x[:-2]])
        target = x[2:]
        normal = np.linalg.solve(design.T @ design, design.T @ target)
        assert np.allclose(coef, normal, atol=1e-8)

    def test_short_context_rejected(self):
        with pytest.raises(DomainError):
            ArForecaster(order=3).fit(np.arange(6.0))


class TestSharedInvariants:
    @pytest.mark.parametrize("forecaster", ALL_FORECASTERS, ids=lambda f: f.name)
    def test_forecast_invariants_random_requests(self, forecaster):
        gen = np.random.default_rng(23)
        for _ in range(25):
            n = int(gen.integers(8, 60))
            ctx = gen.normal(0, 1, n).cumsum()
            req = ForecastRequest(ctx, int(gen.integers(1, 12)), int(gen.integers(1, 9)))
            fc = forecaster.forecast(req, np.random.default_rng(99))
            assert fc.samples.shape == (req.n_samples, req.horizon)
            assert fc.point.shape == (req.horizon,)
            lo = fc.samples.min(axis=0)
            hi = fc.samples.max(axis=0)
            assert np.all(fc.point >= lo) and np.all(fc.point <= hi)

    @pytest.mark.parametrize("forecaster", ALL_FORECASTERS, ids=lambda f: f.name)
    def test_deterministic_given_seed(self, forecaster):
        ctx = np.random.default_rng(2).normal(0, 1, 30).cumsum()
        req = ForecastRequest(ctx, 6, n_samples=5)
        a = forecaster.forecast(req, np.random.default_rng(123))
        b = forecaster.forecast(req, np.random.default_rng(123))
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.point, b.point)

    @pytest.mark.parametrize("forecaster", ALL_FORECASTERS, ids=lambda f: f.name)
    def test_shift_equivariance(self, forecaster):
        gen = np.random.default_rng(31)
        ctx = gen.normal(0, 1, 32).cumsum()
        shift = 11.5
        req1 = ForecastRequest(ctx, 5, n_samples=4)
        req2 = ForecastRequest(ctx + shift, 5, n_samples=4)
        a = forecaster.forecast(req1, np.random.default_rng(7))
        b = forecaster.forecast(req2, np.random.default_rng(7))
        assert np.allclose(b.point, a.point + shift, atol=1e-8)
