"""Generalised Pareto regression: log-linear scale link, likelihood, moments."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gpd import XI_EPS, log_density_array, log_survival_array

ETA_CLAMP = 50.0


@dataclass(frozen=True)
class ExceedanceDataset:
    """Exceedances ``y`` over threshold ``mu`` with design matrix ``x``.

    When ``intercept`` is true the first column of ``x`` must be all ones.
    """

    x: np.ndarray
    y: np.ndarray
    mu: float
    feature_names: tuple = ()
    intercept: bool = True
    dates: tuple | None = None
    # moments used to standardise the non-intercept columns, if any
    standardizer: object | None = field(default=None, compare=False)
    # hold-out sets may be smaller than the p + 2 identifiability margin
    check_rows: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
            raise InvalidInputError(f"design {x.shape} does not match response {y.shape}")
        n, p = x.shape
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("design matrix contains non-finite entries")
        if not np.all(np.isfinite(y)) or not np.isfinite(self.mu):
            raise InvalidInputError("responses and threshold must be finite")
        if np.any(y <= self.mu):
            raise InvalidInputError("every response must exceed the threshold")
        if self.check_rows and n < p + 2:
            raise InvalidInputError(f"need at least p + 2 = {p + 2} rows, got {n}")
        if self.intercept and not np.all(x[:, 0] == 1.0):
            raise InvalidInputError("first design column must be the all-ones intercept")
        names = tuple(self.feature_names)
        if not names:
            lead = ("intercept",) if self.intercept else ()
            names = lead + tuple(f"x{j + 1}" for j in range(p - len(lead)))
        if len(names) != p:
            raise InvalidInputError(f"{len(names)} feature names for {p} design columns")
        if self.dates is not None and len(self.dates) != n:
            raise InvalidInputError("dates must have one entry per row")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def subset(self, idx, check_rows=True) -> "ExceedanceDataset":
        idx = np.asarray(idx)
        dates = None if self.dates is None else tuple(self.dates[i] for i in idx)
        return ExceedanceDataset(self.x[idx], self.y[idx], self.mu, self.feature_names,
                                 self.intercept, dates, self.standardizer, check_rows)

    def replace(self, **changes) -> "ExceedanceDataset":
        return dataclasses.replace(self, **changes)

    @property
    def covariate_slice(self):
        """Columns other than the intercept."""
        return slice(1, None) if self.intercept else slice(None)


@dataclass(frozen=True)
class GprParams:
    """Regression coefficients and the shared shape parameter.

    ``xi >= 1`` is representable (moments then report ``inf``) but never
    produced by a fit: the posterior is zero there.
    """

    beta: np.ndarray
    xi: float

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(b)) or not np.isfinite(self.xi):
            raise InvalidInputError("parameters must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "xi", float(self.xi))

    def as_vector(self):
        return np.append(self.beta, self.xi)


def linear_predictor(x, beta):
    """Return ``(eta, clamped)`` with ``eta`` clipped to +-ETA_CLAMP."""
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x.shape[-1] != beta.size:
        raise InvalidInputError(f"covariate row has {x.shape[-1]} entries but beta has {beta.size}")
    eta = x @ beta
    clamped = np.abs(eta) > ETA_CLAMP
    return np.clip(eta, -ETA_CLAMP, ETA_CLAMP), clamped


def scale_at(x_row, beta):
    """Scale ``exp(x'beta)`` and whether the linear predictor was clamped."""
    eta, clamped = linear_predictor(x_row, beta)
    return float(np.exp(eta)), bool(clamped)


def log_likelihood(data: ExceedanceDataset, params: GprParams) -> float:
    """Sum of GPD log-densities with ``sigma_i = exp(x_i'beta)``; ``-inf`` off-support."""
    eta, _ = linear_predictor(data.x, params.beta)
    return float(np.sum(log_density_array(data.y, data.mu, np.exp(eta), params.xi)))


def loglik_and_grad(x, y, mu, beta, xi):
    """Log-likelihood and its gradient ``(value, d_beta, d_xi)`` on raw arrays.

    Returns ``(-inf, None, None)`` when any observation is outside the support.
    Clamped linear predictors contribute no gradient.
    """
    eta_raw = x @ beta
    eta = np.clip(eta_raw, -ETA_CLAMP, ETA_CLAMP)
    z = (y - mu) * np.exp(-eta)
    if abs(xi) < XI_EPS:
        ll = -np.sum(eta) - np.sum(z)
        d_eta = z - 1.0
        d_xi = np.sum(0.5 * z * z - z)
    else:
        t = xi * z
        if np.any(t <= -1.0):
            return -math.inf, None, None
        lt = np.log1p(t)
        ll = -np.sum(eta) - (1.0 / xi + 1.0) * np.sum(lt)
        r = z / (1.0 + t)
        d_eta = (1.0 + xi) * r - 1.0
        d_xi = np.sum(lt) / (xi * xi) - (1.0 / xi + 1.0) * np.sum(r)
    d_eta = np.where(np.abs(eta_raw) > ETA_CLAMP, 0.0, d_eta)
    return float(ll), x.T @ d_eta, float(d_xi)


def grad_log_likelihood(data: ExceedanceDataset, params: GprParams):
    """Analytic ``(d_beta, d_xi)`` of the log-likelihood.

    Raises InvalidInputError at points outside the support, where the
    likelihood is ``-inf`` and has no gradient.
    """
    ll, gb, gx = loglik_and_grad(data.x, data.y, data.mu, params.beta, params.xi)
    if gb is None:
        raise InvalidInputError("gradient undefined: data outside the support")
    return gb, gx


def _mean_from_scale(sigma, xi, mu):
    if xi >= 1.0:
        return math.inf
    return mu + sigma / (1.0 - xi)


def conditional_mean(x_row, params: GprParams, mu: float) -> float:
    """E[Y | Y > mu, x]; ``math.inf`` when ``xi >= 1``."""
    sigma, _ = scale_at(x_row, params.beta)
    return _mean_from_scale(sigma, params.xi, mu)


def conditional_variance(x_row, params: GprParams) -> float:
    """Var[Y | Y > mu, x]; ``math.inf`` unless ``xi < 0.5``."""
    if params.xi >= 0.5:
        return math.inf
    sigma, _ = scale_at(x_row, params.beta)
    return sigma * sigma / ((1.0 - params.xi) ** 2 * (1.0 - 2.0 * params.xi))


def exceedance_prob(x_row, params: GprParams, mu: float, y0: float) -> float:
    """P(Y > y0 | Y > mu, x) for ``y0 >= mu``."""
    if not np.isfinite(y0) or y0 < mu:
        raise InvalidInputError(f"crash level {y0!r} must be at or above the threshold {mu!r}")
    sigma, _ = scale_at(x_row, params.beta)
    return float(np.exp(log_survival_array(y0, mu, sigma, params.xi)))


def conditional_means(x, params: GprParams, mu: float) -> np.ndarray:
    """Row-wise :func:`conditional_mean` for a design matrix."""
    eta, _ = linear_predictor(x, params.beta)
    if params.xi >= 1.0:
        return np.full(eta.shape, np.inf)
    return mu + np.exp(eta) / (1.0 - params.xi)


def conditional_medians(x, params: GprParams, mu: float) -> np.ndarray:
    eta, _ = linear_predictor(x, params.beta)
    sigma = np.exp(eta)
    if abs(params.xi) < XI_EPS:
        return mu + sigma * math.log(2.0)
    return mu + sigma * math.expm1(params.xi * math.log(2.0)) / params.xi
