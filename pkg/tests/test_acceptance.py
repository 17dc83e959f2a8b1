"""Acceptance criteria, each run at its stated tolerance and budget."""
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import central_diff, make_dataset, write_synthetic_dataset
from oracles import ewma_reference, gk_reference, random_bars
from tailreg.cli import main
from tailreg.fitting import _Objective, fit_map
from tailreg.gpd import GpdParams, gpd_cdf, gpd_density, gpd_quantile, gpd_sample
from tailreg.model import GprParams, exceedance_prob, grad_log_likelihood, log_likelihood
from tailreg.pipeline import MarketFrame, build_tail_dataset, read_dataset, split_train_test
from tailreg.priors import FAMILY_ORDER, GramMatrix, PriorSpec, grad_log_prior, log_prior
from tailreg.report import crash_curve
from tailreg.simulation import SimConfig, run_study
from tailreg.volatility import OhlcSeries, ewma_volatility, garman_klass, log_returns


def _rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0)))


def test_criterion_1_gpd_correctness(criterion):
    t0 = time.perf_counter()
    worst_norm = 0.0
    for sigma in (0.5, 1.0, 3.0):
        for xi in (-0.4, -1e-9, 0.0, 1e-9, 0.3, 0.9):
            p = GpdParams(0.0, sigma, xi)
            if xi < 0:
                val, _ = integrate.quad(lambda y: gpd_density(y, p), 0.0, p.upper_endpoint,
                                        epsabs=1e-12, epsrel=1e-12, limit=200)
            else:
                val, _ = integrate.quad(lambda t: gpd_density(t / (1 - t), p) / (1 - t) ** 2, 0.0, 1.0,
                                        epsabs=1e-12, epsrel=1e-12, limit=500)
            worst_norm = max(worst_norm, abs(val - 1.0))
    q = np.linspace(0.0, 0.999999, 2001)
    worst_trip = max(float(np.max(np.abs(gpd_cdf(gpd_quantile(q, GpdParams(2.0, s, x)), GpdParams(2.0, s, x)) - q)))
                     for s in (0.3, 1.0, 4.0) for x in (-0.4, 0.0, 1e-9, 0.3, 0.8))
    crit = 1.628 / math.sqrt(100_000)
    ks = {}
    for xi in (-0.4, 0.0, 0.3):
        p = GpdParams(2.0, 1.0, xi)
        draws = gpd_sample(p, np.random.default_rng(77), 100_000)
        ks[xi] = stats.kstest(draws, lambda y: gpd_cdf(y, p)).statistic
    elapsed = time.perf_counter() - t0
    ok = worst_norm < 1e-6 and worst_trip < 1e-10 and max(ks.values()) < crit and elapsed < 30
    criterion(1, ok, f"norm err {worst_norm:.1e}, round-trip err {worst_trip:.1e}, "
                     f"max KS {max(ks.values()):.4f} < {crit:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_gradient_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    specs = [PriorSpec.cauchy(), PriorSpec.lasso(0.8), PriorSpec.ridge(1.5), PriorSpec.gprior(4.0)]
    worst = {"loglik": 0.0, **{s.family.value: 0.0 for s in specs}}
    for k in range(20):
        d = make_dataset(60, rng.normal(0, 0.5, 4), rng.uniform(-0.3, 0.5), seed=1000 + k)
        gram = GramMatrix.from_design(d.x)
        while True:
            beta, xi = rng.normal(0, 0.4, 4), float(rng.uniform(-0.3, 0.7))
            if math.isfinite(log_likelihood(d, GprParams(beta, xi))) and np.all(np.abs(beta) > 1e-3):
                break
        theta = np.append(beta, xi)
        ll = lambda t: log_likelihood(d, GprParams(t[:-1], t[-1]))
        gb, gx = grad_log_likelihood(d, GprParams(beta, xi))
        worst["loglik"] = max(worst["loglik"], _rel_err(np.append(gb, gx), central_diff(ll, theta)))
        for spec in specs:
            post = lambda t: ll(t) + log_prior(t[:-1], t[-1], spec, gram)
            pb, px = grad_log_prior(beta, xi, spec, gram)
            analytic = np.append(gb + pb, gx + px)
            _, g_opt = _Objective(d, spec, gram)(theta)
            fd = central_diff(post, theta)
            worst[spec.family.value] = max(worst[spec.family.value], _rel_err(analytic, fd), _rel_err(-g_opt, fd))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and elapsed < 10
    criterion(2, ok, "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s")
    assert ok


def test_criterion_3_consistency(criterion):
    t0 = time.perf_counter()
    hits = 0
    for seed in range(10):
        d = make_dataset(5000, [0.3, -0.6], 0.2, seed=seed)
        fit = fit_map(d, PriorSpec.flat())
        hits += bool(np.all(np.abs(fit.beta - [0.3, -0.6]) < 0.05) and abs(fit.xi - 0.2) < 0.05)
    elapsed = time.perf_counter() - t0
    ok = hits >= 9 and elapsed < 120
    criterion(3, ok, f"{hits}/10 seeds within 0.05, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def default_study():
    t0 = time.perf_counter()
    report = run_study(SimConfig(threads=1))
    return report, time.perf_counter() - t0


def test_criterion_4_simulation_ranks(default_study, criterion):
    report, elapsed = default_study
    s = report.summary
    others = [f.value for f in FAMILY_ORDER[1:]]
    aic_ok = all(s["cauchy"]["aic"] < s[o]["aic"] for o in others)
    bic_ok = all(s["cauchy"]["bic"] < s[o]["bic"] for o in others)
    beta_ok = all(s["cauchy"]["rmse_beta"] <= s[o]["rmse_beta"] for o in others)
    xi_ok = all(s[f.value]["rmse_xi"] <= 0.15 for f in FAMILY_ORDER)
    ok = aic_ok and bic_ok and beta_ok and xi_ok and elapsed < 1800
    cells = "; ".join(f"{f.label} AIC {s[f.value]['aic']:.2f} BIC {s[f.value]['bic']:.2f} "
                      f"RMSE(beta) {s[f.value]['rmse_beta']:.3f} RMSE(xi) {s[f.value]['rmse_xi']:.3f}"
                      for f in FAMILY_ORDER)
    criterion(4, ok, f"{cells}; {elapsed:.0f}s")
    assert ok


def test_criterion_5_timing_order(default_study, criterion):
    report, _ = default_study
    t = {f.value: report.summary[f.value]["time_sec"] for f in FAMILY_ORDER}
    cauchy_fastest = all(t["cauchy"] < t[k] for k in t if k != "cauchy")
    gprior_slowest = all(t["gprior"] > t[k] for k in t if k != "gprior")
    ok = cauchy_fastest and gprior_slowest
    criterion(5, ok, "median seconds " + ", ".join(f"{k} {v:.3f}" for k, v in t.items())
              + ("" if gprior_slowest else "; g-prior is not the slowest"))
    assert ok


def test_criterion_6_volatility(criterion):
    bars = random_bars(100, seed=42)
    r = log_returns(bars.close)
    ewma_err = float(np.nanmax(np.abs(ewma_volatility(r).value - ewma_reference(r))))
    same_missing = np.array_equal(np.isnan(ewma_volatility(r).value), np.isnan(ewma_reference(r)))
    gk_err = float(np.max(np.abs(garman_klass(bars).value - gk_reference(bars.open, bars.high, bars.low, bars.close))))
    flat = OhlcSeries(np.array(["2020-01-02"], dtype="datetime64[D]"), [3.0], [3.0], [3.0], [3.0])
    flat_zero = garman_klass(flat).value[0] == 0.0
    s = bars.scaled(7.3)
    eq_gk = float(np.max(np.abs(garman_klass(s).value - garman_klass(bars).value)))
    eq_ewma = float(np.nanmax(np.abs(ewma_volatility(log_returns(s.close)).value - ewma_volatility(r).value)))
    ok = ewma_err < 1e-12 and gk_err < 1e-12 and same_missing and flat_zero and eq_gk < 1e-12 and eq_ewma < 1e-12
    criterion(6, ok, f"EWMA err {ewma_err:.1e}, GK err {gk_err:.1e}, flat bar {'0' if flat_zero else 'nonzero'}, "
                     f"rescale diff {max(eq_gk, eq_ewma):.1e}")
    assert ok


def test_criterion_7_pipeline(criterion):
    rng = np.random.default_rng(7)
    n = 1000
    r = rng.normal(0, 0.015, n)
    dates = np.datetime64("2012-01-02") + np.arange(n)
    frame = MarketFrame(dates, {"eq_ret": r, "eq_ewma": rng.uniform(0.1, 0.5, n),
                                "au_ewma": rng.uniform(0.05, 0.3, n)})
    data, _ = build_tail_dataset(frame, "eq", 2.0)
    mask = 100 * r < -2.0
    exact = (data.dates == tuple(str(d) for d in dates[mask])
             and np.array_equal(data.y, -100 * r[mask]))
    train, test = split_train_test(data, 0.8, seed=11)
    cov = train.x[:, 1:]
    mean_err = float(np.max(np.abs(cov.mean(axis=0))))
    var_err = float(np.max(np.abs(cov.var(axis=0) - 1.0)))
    again = split_train_test(data, 0.8, seed=11)
    deterministic = (again[0].dates == train.dates and again[1].dates == test.dates
                     and np.array_equal(again[0].x, train.x))
    ok = exact and mean_err < 1e-10 and var_err < 1e-10 and deterministic
    criterion(7, ok, f"{data.n} tail rows {'exact' if exact else 'MISMATCH'}, mean err {mean_err:.1e}, "
                     f"var err {var_err:.1e}, split {'deterministic' if deterministic else 'NOT deterministic'}")
    assert ok


def test_criterion_8_shape_checks(tmp_path, capsys, criterion):
    path = tmp_path / "synthetic.csv"
    write_synthetic_dataset(path, n=400, beta=(0.3, 0.6, 0.4), xi=0.15, seed=5)
    out = tmp_path / "compare.csv"
    code = main(["compare", "--data", str(path), "--seed", "0", "--out", str(out)])
    lines = out.read_text().strip().splitlines()[1:] if out.exists() else []
    rows = [ln.split(",") for ln in lines]
    four_finite = (code == 0 and [r[0] for r in rows] == ["cauchy", "lasso", "ridge", "gprior"]
                   and all(math.isfinite(float(v)) for r in rows for v in r[2:5]))
    fit_path = tmp_path / "fit.txt"
    main(["fit", "--data", str(path), "--seed", "0", "--out", str(fit_path)])
    from tailreg.fitting import read_fit
    fit = read_fit(fit_path)
    data = read_dataset(path)
    monotone = True
    at_mu = True
    for col in ("v1_ewma", "v2_ewma"):
        monotone &= bool(np.all(np.diff(crash_curve(fit, data, col)["prob"]) > 0))
        at_mu &= bool(np.all(crash_curve(fit, data, col, y0=fit.mu)["prob"] == 1.0))
    ok = four_finite and monotone and at_mu
    criterion(8, ok, f"compare rows {'4 finite' if four_finite else 'BAD'}, curves "
                     f"{'monotone' if monotone else 'NOT monotone'}, prob at mu {'1' if at_mu else 'not 1'}")
    assert ok


def test_criterion_9_exceedance_monte_carlo(criterion):
    p = exceedance_prob([1.0], GprParams([0.0], 0.5), 2.0, 5.0)
    draws = gpd_sample(GpdParams(2.0, 1.0, 0.5), np.random.default_rng(99), 1_000_000)
    freq = float(np.mean(draws > 5.0))
    se = math.sqrt(freq * (1 - freq) / draws.size)
    ok = abs(p - 0.16) < 1e-12 and abs(p - freq) < 3 * se
    criterion(9, ok, f"analytic {p:.6f}, MC {freq:.6f} +- {se:.6f}")
    assert ok
