import numpy as np
import pytest

from tailreg.gpd import GpdParams, gpd_quantile
from tailreg.model import ExceedanceDataset


def make_dataset(n, beta, xi, mu=2.0, seed=0, intercept=True):
    """Draw an exceedance dataset from the model with standard-normal covariates."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    x = rng.standard_normal((n, p))
    if intercept:
        x[:, 0] = 1.0
    sigma = np.exp(x @ beta)
    y = mu + sigma * gpd_quantile(rng.random(n), GpdParams(0.0, 1.0, xi))
    y = np.maximum(y, np.nextafter(mu, np.inf))
    return ExceedanceDataset(x, y, mu, intercept=intercept)


def central_diff(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_synthetic_dataset(path, n=300, beta=(0.3, 0.6, 0.4), xi=0.15, seed=0):
    """Dump a standardised two-covariate tail dataset whose scale rises with both covariates."""
    from tailreg.pipeline import Standardizer, write_dataset

    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.05, 0.6, (n, len(beta) - 1))
    names = tuple(f"v{j}_ewma" for j in range(1, len(beta)))
    std = Standardizer.fit(raw, names)
    x = np.column_stack([np.ones(n), std.transform(raw)])
    y = 2.0 + np.exp(x @ np.asarray(beta)) * gpd_quantile(rng.random(n), GpdParams(0.0, 1.0, xi))
    y = np.maximum(y, np.nextafter(2.0, np.inf))
    dates = tuple(str(np.datetime64("2015-01-01") + i) for i in range(n))
    data = ExceedanceDataset(x, y, 2.0, ("intercept",) + names, True, dates, std)
    write_dataset(path, data)
    return data


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, ok, detail):
        _ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
