"""Post-fit tables: crash-probability curves and fitted-vs-observed losses.

Tables are plain ``{column: array}`` dicts in column order, written as
comma-delimited text ready for any plotting tool.
"""
from __future__ import annotations

import csv

import numpy as np

from .errors import InvalidInputError
from .fitting import FitResult, predict
from .model import ExceedanceDataset, conditional_means, linear_predictor
from .gpd import log_survival_array
from .textio import fmt_float

DEFAULT_PERCENTILES = tuple(range(5, 100, 5))


def _covariate_index(fit: FitResult, data: ExceedanceDataset, column):
    if tuple(fit.feature_names) != tuple(data.feature_names):
        raise InvalidInputError(f"fit covariates {fit.feature_names} differ from data {data.feature_names}")
    if isinstance(column, int):
        j = column
    else:
        try:
            j = data.feature_names.index(column)
        except ValueError:
            raise InvalidInputError(f"{column!r} is not a fitted covariate; have {data.feature_names}") from None
    if data.intercept and j == 0:
        raise InvalidInputError("cannot sweep the intercept")
    return j


def crash_curve(fit: FitResult, data: ExceedanceDataset, sweep_column, y0: float = 5.0,
                percentiles=DEFAULT_PERCENTILES, pin_quantile: float = 0.5) -> dict:
    """Crash probability and expected loss along one covariate.

    The swept covariate runs over the given percentiles of its values in
    ``data``; every other covariate is pinned at its ``pin_quantile``
    (the median by default).
    """
    if not y0 >= fit.mu:
        raise InvalidInputError(f"crash level {y0} is below the threshold {fit.mu}")
    j = _covariate_index(fit, data, sweep_column)
    pct = np.asarray(percentiles, dtype=float)
    if np.any((pct < 0) | (pct > 100)):
        raise InvalidInputError("percentiles must lie in [0, 100]")
    base = np.quantile(data.x, pin_quantile, axis=0)
    if data.intercept:
        base[0] = 1.0
    grid = np.percentile(data.x[:, j], pct)
    rows = np.tile(base, (pct.size, 1))
    rows[:, j] = grid
    eta, _ = linear_predictor(rows, fit.beta)
    prob = np.exp(log_survival_array(y0, fit.mu, np.exp(eta), fit.xi))
    table = {"percentile": pct, "value": grid}
    std = data.standardizer
    name = data.feature_names[j]
    if std is not None and name in std.names:
        k = std.names.index(name)
        table["raw_value"] = grid * std.std[k] + std.mean[k]
    table["prob"] = prob
    table["expected_loss"] = conditional_means(rows, fit.params, fit.mu)
    return table


def fitted_vs_observed(fit: FitResult, data: ExceedanceDataset) -> dict:
    """One row per observation: observed loss, fitted conditional mean, covariates."""
    fitted, _ = predict(data.x, fit)
    table = {}
    if data.dates is not None:
        table["date"] = np.asarray(data.dates, dtype=object)
    table["observed"] = data.y.copy()
    table["fitted"] = fitted
    table["log_observed"] = np.log(data.y)
    table["log_fitted"] = np.log(fitted)
    for j, name in enumerate(data.feature_names):
        if data.intercept and j == 0:
            continue
        table[name] = data.x[:, j].copy()
    return table


def curve_summary(table: dict, low=10.0, high=90.0) -> dict:
    """Probability and expected loss at the ``low`` and ``high`` sweep percentiles (interpolated)."""
    pct = table["percentile"]
    out = {}
    for tag, q in (("low", low), ("high", high)):
        out[f"pct_{tag}"] = q
        out[f"prob_{tag}"] = float(np.interp(q, pct, table["prob"]))
        out[f"loss_{tag}"] = float(np.interp(q, pct, table["expected_loss"]))
    return out


def write_table(path, table: dict) -> None:
    cols = list(table)
    n = len(next(iter(table.values()))) if cols else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(n):
            w.writerow([v[i] if isinstance(v[i], str) else fmt_float(v[i]) for v in table.values()])


def read_table(path) -> dict:
    """Parse a table written by :func:`write_table`; numeric columns become float arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        data = [list(r) for r in reader if r]
    out = {}
    for j, c in enumerate(cols):
        vals = [r[j] for r in data]
        try:
            out[c] = np.array([float(v) for v in vals])
        except ValueError:
            out[c] = np.array(vals, dtype=object)
    return out
