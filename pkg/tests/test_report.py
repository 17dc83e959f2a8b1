import math

import numpy as np
import pytest

from conftest import make_dataset
from tailreg.errors import InvalidInputError
from tailreg.fitting import fit_map, predict
from tailreg.model import GprParams
from tailreg.priors import PriorSpec
from tailreg.report import crash_curve, curve_summary, fitted_vs_observed, read_table, write_table


@pytest.fixture(scope="module")
def fitted():
    data = make_dataset(400, [0.2, 0.5, 0.3], 0.15, seed=8)
    data = data.replace(feature_names=("intercept", "vol_a", "vol_b"), dates=tuple(f"d{i}" for i in range(400)))
    return fit_map(data, PriorSpec.cauchy()), data


def _with_params(fit, beta, xi):
    return type(fit)(**{**fit.__dict__, "params": GprParams(beta, xi)})


class TestCrashCurve:
    def test_flat_without_covariate_effect(self, fitted):
        fit, data = fitted
        flat = _with_params(fit, [0.4, 0.0, 0.0], 0.2)
        t = crash_curve(flat, data, "vol_a")
        ref = (1 + 0.2 * 3.0 / math.exp(0.4)) ** (-1 / 0.2)
        np.testing.assert_allclose(t["prob"], ref, rtol=1e-12)

    def test_monotone_in_positive_coefficient(self, fitted):
        fit, data = fitted
        assert fit.beta[1] > 0
        t = crash_curve(fit, data, "vol_a")
        assert np.all(np.diff(t["prob"]) > 0) and np.all(np.diff(t["expected_loss"]) > 0)

    def test_probability_one_at_threshold(self, fitted):
        fit, data = fitted
        np.testing.assert_array_equal(crash_curve(fit, data, "vol_a", y0=fit.mu)["prob"], 1.0)
        with pytest.raises(InvalidInputError):
            crash_curve(fit, data, "vol_a", y0=fit.mu - 0.1)

    def test_pinned_at_median(self, fitted):
        fit, data = fitted
        t = crash_curve(fit, data, "vol_a", percentiles=[50])
        med = np.median(data.x, axis=0)
        sigma = math.exp(fit.beta[0] + fit.beta[1] * med[1] + fit.beta[2] * med[2])
        ref = (1 + fit.xi * (5.0 - fit.mu) / sigma) ** (-1 / fit.xi)
        assert t["prob"][0] == pytest.approx(ref, rel=1e-12)

    def test_only_median_of_other_column_matters(self, fitted):
        fit, data = fitted
        x = data.x.copy()
        lo = x[:, 2] < np.quantile(x[:, 2], 0.25)
        x[lo, 2] -= 5.0  # moves the bottom quarter further down, median unchanged
        a = crash_curve(fit, data, "vol_a")
        b = crash_curve(fit, data.replace(x=x), "vol_a")
        np.testing.assert_array_equal(a["prob"], b["prob"])

    def test_unknown_column(self, fitted):
        fit, data = fitted
        with pytest.raises(InvalidInputError):
            crash_curve(fit, data, "vol_z")
        with pytest.raises(InvalidInputError):
            crash_curve(fit, data, "intercept")

    def test_summary(self, fitted):
        fit, data = fitted
        s = curve_summary(crash_curve(fit, data, "vol_a"))
        assert s["prob_low"] < s["prob_high"]


class TestFittedVsObserved:
    def test_delegation_and_rows(self, fitted):
        fit, data = fitted
        t = fitted_vs_observed(fit, data)
        np.testing.assert_array_equal(t["fitted"], predict(data, fit)[0])
        assert len(t["observed"]) == data.n
        assert list(t) == ["date", "observed", "fitted", "log_observed", "log_fitted", "vol_a", "vol_b"]

    def test_csv_round_trip(self, fitted, tmp_path):
        fit, data = fitted
        t = fitted_vs_observed(fit, data)
        write_table(tmp_path / "t.csv", t)
        back = read_table(tmp_path / "t.csv")
        assert list(back) == list(t)
        for k in t:
            if k == "date":
                assert list(back[k]) == list(t[k])
            else:
                np.testing.assert_array_equal(back[k], t[k])
