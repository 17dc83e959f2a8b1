"""Generalised Pareto distribution primitives.

All functions broadcast over ``y`` (or ``q``) like numpy ufuncs and return a
Python float when given a scalar.  The shape parameter switches to the
exponential limit when ``|xi| < XI_EPS``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

XI_EPS = 1e-8


@dataclass(frozen=True)
class GpdParams:
    """Threshold ``mu``, scale ``sigma`` and shape ``xi`` of one GPD law."""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise InvalidInputError(f"GPD parameter {name} must be finite, got {v!r}")
        if self.sigma <= 0:
            raise InvalidInputError(f"GPD scale must be positive, got {self.sigma!r}")

    @property
    def upper_endpoint(self) -> float:
        """Right end of the support (``inf`` unless ``xi < 0``)."""
        if self.xi < 0 and abs(self.xi) >= XI_EPS:
            return self.mu - self.sigma / self.xi
        return np.inf


def _scalarize(out, like):
    return float(out) if np.ndim(like) == 0 else out


def _check_finite(y, what="y"):
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} must be finite")
    return arr


def log_density_array(y, mu, sigma, xi):
    """Vectorised GPD log-density without argument validation.

    ``sigma`` may be an array broadcastable against ``y``.  Points outside
    the support get ``-inf``.
    """
    z = (np.asarray(y, dtype=float) - mu) / sigma
    logsig = np.log(sigma)
    if abs(xi) < XI_EPS:
        out = -logsig - z
        return np.where(z >= 0, out, -np.inf)
    t = xi * z
    with np.errstate(invalid="ignore", divide="ignore"):
        out = -logsig - (1.0 / xi + 1.0) * np.log1p(t)
    ok = (z >= 0) & (t > -1.0)
    return np.where(ok, out, -np.inf)


def log_survival_array(y, mu, sigma, xi):
    """Vectorised log of P(Y > y); ``0`` below the threshold."""
    z = np.maximum((np.asarray(y, dtype=float) - mu) / sigma, 0.0)
    if abs(xi) < XI_EPS:
        return -z
    t = xi * z
    with np.errstate(invalid="ignore", divide="ignore"):
        out = -np.log1p(t) / xi
    return np.where(t > -1.0, out, -np.inf)


def gpd_log_density(y, p: GpdParams):
    """Log-density at ``y``; ``-inf`` outside the support."""
    arr = _check_finite(y)
    return _scalarize(log_density_array(arr, p.mu, p.sigma, p.xi), y)


def gpd_density(y, p: GpdParams):
    return _scalarize(np.exp(log_density_array(_check_finite(y), p.mu, p.sigma, p.xi)), y)


def gpd_survival(y, p: GpdParams):
    """P(Y > y), computed directly rather than as ``1 - cdf``."""
    arr = _check_finite(y)
    return _scalarize(np.exp(log_survival_array(arr, p.mu, p.sigma, p.xi)), y)


def gpd_cdf(y, p: GpdParams):
    """P(Y <= y)."""
    arr = _check_finite(y)
    return _scalarize(-np.expm1(log_survival_array(arr, p.mu, p.sigma, p.xi)), y)


def gpd_quantile(q, p: GpdParams):
    """Inverse CDF for ``q`` in ``[0, 1)``."""
    arr = _check_finite(q, "q")
    if np.any((arr < 0) | (arr >= 1)):
        raise InvalidInputError("quantile level must lie in [0, 1)")
    # log(1 - q) via log1p keeps precision for small q
    l1q = np.log1p(-arr)
    if abs(p.xi) < XI_EPS:
        out = p.mu - p.sigma * l1q
    else:
        out = p.mu + p.sigma * np.expm1(-p.xi * l1q) / p.xi
    return _scalarize(out, q)


def gpd_sample(p: GpdParams, rng: np.random.Generator, size=None):
    """Draw from the GPD by inverse transform.

    Parameters
    ----------
    p : GpdParams
    rng : numpy.random.Generator
        Owned by the caller; advanced in place.
    size : int or tuple, optional
        ``None`` returns a single float.
    """
    u = rng.random(size)
    # 1 - u lies in (0, 1]; quantile needs q = u in [0, 1)
    return gpd_quantile(u, p)
