import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ewma_reference, gk_reference, random_bars
from tailreg.errors import InvalidInputError
from tailreg.pipeline import simulate_ohlc
from tailreg.volatility import OhlcSeries, ewma_volatility, garman_klass, log_returns


def _bar(o, h, l, c):
    return OhlcSeries(np.array(["2020-01-02"], dtype="datetime64[D]"), [o], [h], [l], [c])


class TestOhlcSeries:
    def test_rejects_unsorted_dates(self):
        d = np.array(["2020-01-02", "2020-01-01"], dtype="datetime64[D]")
        with pytest.raises(InvalidInputError):
            OhlcSeries(d, [1, 1], [1, 1], [1, 1], [1, 1])

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidInputError):
            _bar(1.0, 1.0, 0.0, 1.0)


class TestLogReturns:
    def test_constant(self):
        np.testing.assert_array_equal(log_returns([5.0] * 4), np.zeros(3))

    def test_single(self):
        assert log_returns([100.0, 100 * math.exp(0.01)])[0] == pytest.approx(0.01, abs=1e-15)

    def test_round_trip(self):
        c = random_bars(50).close
        np.testing.assert_allclose(np.exp(np.cumsum(log_returns(c))), c[1:] / c[0], rtol=1e-12)


class TestEwma:
    def test_constant_returns(self):
        v = ewma_volatility(np.full(30, 0.02))
        assert v.missing.sum() == 20
        np.testing.assert_allclose(v.value[20:], math.sqrt(0.1 * 0.02 ** 2) * math.sqrt(250), rtol=1e-12)

    def test_zero_returns(self):
        v = ewma_volatility(np.zeros(25))
        np.testing.assert_array_equal(v.value[20:], 0.0)

    def test_matches_reference(self):
        r = np.random.default_rng(7).normal(0, 0.012, 100)
        np.testing.assert_allclose(ewma_volatility(r).value, ewma_reference(r), rtol=1e-12, atol=1e-12)

    def test_reference_other_settings(self):
        r = np.random.default_rng(8).normal(0, 0.02, 60)
        np.testing.assert_allclose(ewma_volatility(r, 0.7, 5).value, ewma_reference(r, 0.7, 5),
                                   rtol=1e-12, atol=1e-12)

    def test_current_day_excluded_from_window(self):
        r = np.zeros(25)
        r[-1] = 0.05
        v = ewma_volatility(r).value[-1]
        assert v == pytest.approx(math.sqrt(0.1) * 0.05 * math.sqrt(250))

    def test_short_series(self):
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            v = ewma_volatility(np.zeros(10))
        assert w and np.all(np.isnan(v.value))

    @pytest.mark.parametrize("kw", [{"window": 2}, {"alpha": 1.0}, {"alpha": 0.0}])
    def test_bad_arguments(self, kw):
        with pytest.raises(InvalidInputError):
            ewma_volatility(np.zeros(30), **kw)


class TestGarmanKlass:
    def test_flat_bar(self):
        v = garman_klass(_bar(5.0, 5.0, 5.0, 5.0))
        assert v.value[0] == 0.0 and not v.clamped[0]

    def test_range_only(self):
        v = garman_klass(_bar(100.0, 100 * math.exp(0.01), 100 * math.exp(-0.01), 100.0))
        assert (v.value[0] / math.sqrt(250)) ** 2 == pytest.approx(2e-4, rel=1e-12)

    def test_pathological_bar_clamped(self):
        bar = _bar(100.0, 100.0, 100.0, 103.0)
        with pytest.raises(InvalidInputError, match="bar 0"):
            garman_klass(bar)
        v = garman_klass(bar, strict=False)
        assert v.value[0] == 0.0 and v.clamped[0]

    def test_matches_reference(self):
        b = random_bars(100, seed=3)
        np.testing.assert_allclose(garman_klass(b).value, gk_reference(b.open, b.high, b.low, b.close),
                                   rtol=1e-12, atol=1e-12)

    def test_valid_bars_never_clamp(self):
        assert not garman_klass(random_bars(500, seed=9)).clamped.any()

    def test_unbiased_for_random_walk(self):
        # the single-bar estimator is noisy; its mean over many driftless days tracks the true variance
        vol = 0.012
        bars = simulate_ohlc(3000, vol, seed=1, steps=2000)
        est = garman_klass(bars).value / math.sqrt(250)
        assert np.mean(est ** 2) == pytest.approx(vol ** 2, rel=0.1)


class TestScaleEquivariance:
    @settings(max_examples=20, deadline=None)
    @given(factor=st.sampled_from([7.3, 0.01, 1e3]), seed=st.integers(0, 1000))
    def test_price_rescaling(self, factor, seed):
        b = random_bars(60, seed)
        s = b.scaled(factor)
        np.testing.assert_allclose(garman_klass(s).value, garman_klass(b).value, rtol=1e-9, atol=1e-12)
        e1 = ewma_volatility(log_returns(b.close)).value
        e2 = ewma_volatility(log_returns(s.close)).value
        np.testing.assert_allclose(e2, e1, rtol=1e-9, atol=1e-12)
