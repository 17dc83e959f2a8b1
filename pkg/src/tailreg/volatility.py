"""Daily volatility estimators: EWMA empirical volatility and Garman-Klass."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

TRADING_DAYS = 250
GK_COEF = 2.0 * math.log(2.0) - 1.0


@dataclass(frozen=True)
class OhlcSeries:
    """Daily bars with strictly increasing dates and positive prices.

    The high/low ordering of each bar is checked by :func:`garman_klass`,
    which needs it, so that close-only consumers accept imperfect feeds.
    """

    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    dropped_rows: int = 0

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        cols = {k: np.asarray(getattr(self, k), dtype=float) for k in ("open", "high", "low", "close")}
        n = dates.size
        for k, v in cols.items():
            if v.shape != (n,):
                raise InvalidInputError(f"{k} has shape {v.shape}, expected ({n},)")
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                bad = int(np.flatnonzero(~(np.isfinite(v) & (v > 0)))[0])
                raise InvalidInputError(f"{k} price must be positive at bar {bad} ({dates[bad]})")
        if n > 1 and np.any(np.diff(dates).astype(int) <= 0):
            bad = int(np.flatnonzero(np.diff(dates).astype(int) <= 0)[0]) + 1
            raise InvalidInputError(f"dates not strictly increasing at bar {bad} ({dates[bad]})")
        object.__setattr__(self, "dates", dates)
        for k, v in cols.items():
            object.__setattr__(self, k, v)

    def __len__(self):
        return self.dates.size

    def scaled(self, factor: float) -> "OhlcSeries":
        return OhlcSeries(self.dates, self.open * factor, self.high * factor,
                          self.low * factor, self.close * factor, self.dropped_rows)


@dataclass(frozen=True)
class VolSeries:
    """Annualised volatility in fractional units; NaN marks missing entries."""

    dates: np.ndarray | None
    value: np.ndarray
    warmup: int = 0
    clamped: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        object.__setattr__(self, "value", v)
        if self.clamped is None:
            object.__setattr__(self, "clamped", np.zeros(v.size, dtype=bool))

    def __len__(self):
        return self.value.size

    @property
    def missing(self):
        return np.isnan(self.value)


def log_returns(close) -> np.ndarray:
    """Fractional log-returns ``log(C_t / C_{t-1})``; one shorter than the input."""
    c = np.asarray(close, dtype=float)
    if np.any(~np.isfinite(c)) or np.any(c <= 0):
        raise InvalidInputError("prices must be positive and finite")
    return np.diff(np.log(c))


def ewma_volatility(returns, alpha: float = 0.9, window: int = 21, dates=None) -> VolSeries:
    """EWMA-blended volatility ``sqrt(alpha s^2 + (1 - alpha) r_t^2) * sqrt(250)``.

    ``s^2`` is the unbiased sample variance of the ``window - 1`` returns
    preceding day ``t`` (day ``t`` itself excluded), so the first
    ``window - 1`` entries are missing.
    """
    r = np.asarray(returns, dtype=float)
    if window < 3:
        # the unbiased variance needs at least two past returns
        raise InvalidInputError(f"window must be at least 3, got {window}")
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    k = window - 1
    out = np.full(r.size, np.nan)
    if r.size < window:
        warnings.warn(f"series of {r.size} returns is shorter than the {window}-day window", stacklevel=2)
        return VolSeries(dates, out, warmup=r.size)
    past = np.lib.stride_tricks.sliding_window_view(r[:-1], k)  # rows: r[t-k:t] for t = k..n-1
    s2 = past.var(axis=1, ddof=1)
    cur = r[k:]
    out[k:] = np.sqrt(alpha * s2 + (1.0 - alpha) * cur * cur) * math.sqrt(TRADING_DAYS)
    return VolSeries(dates, out, warmup=k)


def garman_klass(bars: OhlcSeries, strict: bool = True) -> VolSeries:
    """Per-bar Garman-Klass volatility, annualised.

    Raw variances below zero are clamped to 0 and flagged in ``clamped``.
    A bar obeying ``low <= open, close <= high`` never goes negative, so the
    clamp only matters with ``strict=False``, which accepts such
    inconsistent bars (e.g. a flat range around a moving close) instead
    of raising.
    """
    o, h, l, c = bars.open, bars.high, bars.low, bars.close
    bad = (l > np.minimum(o, c)) | (h < np.maximum(o, c)) | (l > h)
    if strict and np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise InvalidInputError(
            f"bar {i} ({bars.dates[i]}) violates low <= open/close <= high: "
            f"O={o[i]} H={h[i]} L={l[i]} C={c[i]}")
    hl = np.log(h / l)
    co = np.log(c / o)
    var = 0.5 * hl * hl - GK_COEF * co * co
    clamped = var < 0
    return VolSeries(bars.dates, np.sqrt(np.where(clamped, 0.0, var)) * math.sqrt(TRADING_DAYS),
                     warmup=0, clamped=clamped)
