"""From raw OHLC files to an exceedance dataset.

Steps: load bars, compute log-returns and volatilities per asset, inner-join
the assets on common dates, keep the days where the target loses more than
the threshold, and build the (optionally standardised) design.  Returns and
``y`` are in percent inside the dataset; volatilities stay fractional.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import InsufficientTailDataError, InvalidInputError
from .model import ExceedanceDataset
from .textio import fmt_float, parse_bool, read_kv, write_kv
from .volatility import OhlcSeries, ewma_volatility, garman_klass, log_returns

log = logging.getLogger(__name__)

DATE_FORMATS = {
    "iso": ("%Y-%m-%d",),
    "dayfirst": ("%d/%m/%Y", "%d-%m-%Y", "%d.%m.%Y"),
    "monthfirst": ("%m/%d/%Y", "%m-%d-%Y"),
}
MISSING = {"", "na", "nan", "null", "none", "-"}


# ---------------------------------------------------------------------------
# loading

def _parse_date(text, formats, where):
    for fmt in formats:
        try:
            return datetime.strptime(text.strip(), fmt).date()
        except ValueError:
            continue
    raise InvalidInputError(f"{where}: cannot parse date {text!r} with {', '.join(formats)}")


def load_ohlc_csv(path, date_col="date", open_col="open", high_col="high", low_col="low",
                  close_col="close", date_format="iso", delimiter=",") -> OhlcSeries:
    """Read daily bars from a delimited file with a header row.

    Column names match case-insensitively.  ``date_format`` is ``"iso"``,
    ``"dayfirst"``, ``"monthfirst"`` or an explicit ``strptime`` pattern.
    Rows with any missing price are dropped and counted in
    ``OhlcSeries.dropped_rows``; files in descending date order are reversed.
    """
    formats = DATE_FORMATS.get(date_format, (date_format,))
    wanted = {"date": date_col, "open": open_col, "high": high_col, "low": low_col, "close": close_col}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file") from None
        lower = [h.strip().lower() for h in header]
        idx = {}
        for key, name in wanted.items():
            try:
                idx[key] = lower.index(name.lower())
            except ValueError:
                raise InvalidInputError(f"{path}: missing column {name!r} (header: {header})") from None
        dates, rows, dropped = [], [], 0
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not c.strip() for c in rec):
                continue
            where = f"{path}:{lineno}"
            if len(rec) < len(header):
                rec = rec + [""] * (len(header) - len(rec))
            vals = []
            missing = False
            for key in ("open", "high", "low", "close"):
                raw = rec[idx[key]].strip()
                if raw.lower() in MISSING:
                    missing = True
                    break
                try:
                    vals.append(float(raw.replace(",", "")))  # thousands separators
                except ValueError:
                    raise InvalidInputError(f"{where}: cannot parse {key} value {raw!r}") from None
            if missing:
                dropped += 1
                continue
            dates.append(_parse_date(rec[idx["date"]], formats, where))
            rows.append(vals)
    if not rows:
        raise InvalidInputError(f"{path}: no complete price rows")
    if dropped:
        log.info("%s: dropped %d rows with missing prices", path, dropped)
    d = np.array(dates, dtype="datetime64[D]")
    a = np.array(rows)
    if d.size > 1 and d[0] > d[-1]:
        d, a = d[::-1], a[::-1]
    return OhlcSeries(d, a[:, 0], a[:, 1], a[:, 2], a[:, 3], dropped_rows=dropped)


def write_ohlc_csv(path, bars: OhlcSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "open", "high", "low", "close"))
        for i in range(len(bars)):
            w.writerow((str(bars.dates[i]), fmt_float(bars.open[i]), fmt_float(bars.high[i]),
                        fmt_float(bars.low[i]), fmt_float(bars.close[i])))


def simulate_ohlc(n_days, daily_vol, seed=0, start="2010-01-04", price=100.0, steps=390,
                  vol_path=None) -> OhlcSeries:
    """Zero-drift geometric random walk sampled ``steps`` times per day.

    Each day opens at the previous close (no overnight jumps).  ``vol_path``
    optionally gives a per-day volatility overriding ``daily_vol``.
    """
    rng = np.random.default_rng(seed)
    vols = np.full(n_days, daily_vol) if vol_path is None else np.asarray(vol_path, dtype=float)
    incr = rng.standard_normal((n_days, steps)) * (vols / math.sqrt(steps))[:, None]
    incr -= 0.5 * (vols[:, None] ** 2) / steps
    paths = np.cumsum(incr, axis=1)
    open_log = np.concatenate([[0.0], np.cumsum(paths[:, -1])[:-1]]) + math.log(price)
    high = open_log + np.maximum(paths.max(axis=1), 0.0)
    low = open_log + np.minimum(paths.min(axis=1), 0.0)
    close = open_log + paths[:, -1]
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(n_days), roll="forward")
    return OhlcSeries(dates, np.exp(open_log), np.exp(high), np.exp(low), np.exp(close))


# ---------------------------------------------------------------------------
# market frame

@dataclass
class MarketFrame:
    """Per-asset return and volatility columns on the common trading dates."""

    dates: np.ndarray
    columns: dict
    n_unaligned: dict = field(default_factory=dict)
    n_incomplete: int = 0

    def __post_init__(self):
        for k, v in self.columns.items():
            if len(v) != len(self.dates):
                raise InvalidInputError(f"column {k} has {len(v)} rows, frame has {len(self.dates)}")

    def __len__(self):
        return len(self.dates)

    @property
    def names(self):
        return list(self.columns)


def asset_columns(name, bars: OhlcSeries, alpha=0.9, window=21):
    """Return ``(dates, {column: values})`` for one asset, starting at its second bar."""
    r = log_returns(bars.close)
    cols = {f"{name}_ret": r, f"{name}_ewma": ewma_volatility(r, alpha, window).value}
    gk = garman_klass(bars)
    cols[f"{name}_gk"] = gk.value[1:]
    return bars.dates[1:], cols


def build_market_frame(assets: dict, alpha=0.9, window=21) -> MarketFrame:
    """Inner-join the assets on date and drop rows still in a warm-up window."""
    if not assets:
        raise InvalidInputError("need at least one asset")
    per = {name: asset_columns(name, bars, alpha, window) for name, bars in assets.items()}
    common = None
    for d, _ in per.values():
        common = d if common is None else np.intersect1d(common, d)
    n_unaligned = {name: int(d.size - common.size) for name, (d, _) in per.items()}
    columns = {}
    for name, (d, cols) in per.items():
        pos = np.searchsorted(d, common)
        for k, v in cols.items():
            columns[k] = v[pos]
    ok = np.ones(common.size, dtype=bool)
    for v in columns.values():
        ok &= np.isfinite(v)
    n_incomplete = int((~ok).sum())
    for name, n in n_unaligned.items():
        if n:
            log.info("%s: %d dates without a match in every asset", name, n)
    return MarketFrame(common[ok], {k: v[ok] for k, v in columns.items()}, n_unaligned, n_incomplete)


# ---------------------------------------------------------------------------
# standardisation

@dataclass(frozen=True)
class Standardizer:
    """Column means and (population) standard deviations."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x, names) -> "Standardizer":
        x = np.asarray(x, dtype=float)
        sd = x.std(axis=0)
        if np.any(sd <= 0):
            bad = [n for n, s in zip(names, sd) if s <= 0]
            raise InvalidInputError(f"cannot standardise constant column(s): {bad}")
        return cls(tuple(names), x.mean(axis=0), sd)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


def build_tail_dataset(frame: MarketFrame, target: str, threshold_pct: float = 2.0, covariates=None,
                       standardize: bool = True, lag: int = 0, log_columns=()):
    """Days where ``target`` falls by more than ``threshold_pct`` percent.

    ``y = |r|`` in percent with ``mu = threshold_pct``.  The design is an
    intercept followed by the ``covariates`` columns of ``frame`` (default:
    every ``*_ewma`` column), taken ``lag`` rows earlier and log-transformed
    first when listed in ``log_columns``.  The standardiser is fitted on the
    retained rows.  Returns ``(dataset, standardizer_or_None)``.
    """
    if not threshold_pct > 0:
        raise InvalidInputError("threshold must be positive")
    ret_col = f"{target}_ret"
    if ret_col not in frame.columns:
        raise InvalidInputError(f"no return column for target {target!r}")
    if covariates is None:
        covariates = [c for c in frame.names if c.endswith("_ewma")]
    covariates = list(covariates)
    for c in covariates:
        if c not in frame.columns:
            raise InvalidInputError(f"unknown covariate column {c!r}; have {frame.names}")
    if lag not in (0, 1):
        raise InvalidInputError("lag must be 0 or 1")
    r_pct = 100.0 * frame.columns[ret_col]
    covs = np.column_stack([frame.columns[c] for c in covariates]) if covariates else np.empty((len(frame), 0))
    dates = frame.dates
    if lag:
        r_pct, covs, dates = r_pct[1:], covs[:-1], dates[1:]
    covs = covs.copy()
    keep = r_pct < -threshold_pct
    for c in log_columns:
        j = covariates.index(c)
        pos = covs[:, j] > 0
        dropped = int(np.sum(keep & ~pos))
        if dropped:
            log.info("dropping %d tail rows with non-positive %s before the log transform", dropped, c)
        keep &= pos
        covs[pos, j] = np.log(covs[pos, j])
    y = -r_pct[keep]
    covs = covs[keep]
    n, p = covs.shape[0], covs.shape[1] + 1
    if n < p + 2:
        raise InsufficientTailDataError(
            f"only {n} days below -{threshold_pct}%; need at least {p + 2} for {p} coefficients")
    names = tuple(("log_" + c) if c in log_columns else c for c in covariates)
    std = None
    if standardize and covs.shape[1]:
        std = Standardizer.fit(covs, names)
        covs = std.transform(covs)
    x = np.column_stack([np.ones(n), covs])
    data = ExceedanceDataset(x, y, float(threshold_pct), ("intercept",) + names, True,
                             tuple(str(d) for d in dates[keep]), std)
    return data, std


def split_train_test(data: ExceedanceDataset, train_frac: float = 0.8, seed: int = 0,
                     refit_standardizer: bool = True):
    """Seeded random split.

    With ``refit_standardizer`` (default) a standardised dataset is mapped
    back to raw covariates and re-standardised with moments from the
    training rows only, which are then applied to the test rows.
    """
    if not 0 < train_frac < 1:
        raise InvalidInputError("train_frac must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_train = int(round(data.n * train_frac))
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    train, test = data.subset(tr), data.subset(te, check_rows=False)
    if refit_standardizer and data.standardizer is not None:
        cs = data.covariate_slice
        raw = data.standardizer.inverse(data.x[:, cs])
        std = Standardizer.fit(raw[tr], data.standardizer.names)

        def restd(part, idx):
            x = part.x.copy()
            x[:, cs] = std.transform(raw[idx])
            return part.replace(x=x, standardizer=std)

        train, test = restd(train, tr), restd(test, te)
    return train, test


# ---------------------------------------------------------------------------
# dataset dump

def meta_path(path):
    return str(path) + ".meta"


def write_dataset(path, data: ExceedanceDataset, extra=None) -> None:
    """Write ``date, y, <covariates>`` plus a ``key = value`` sidecar."""
    cs = data.covariate_slice
    names = data.feature_names[cs]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "y") + tuple(names))
        for i in range(data.n):
            d = data.dates[i] if data.dates is not None else str(i)
            w.writerow([d, fmt_float(data.y[i])] + [fmt_float(v) for v in data.x[i, cs]])
    items = [("mu", data.mu), ("intercept", data.intercept), ("n_rows", data.n),
             ("covariates", ",".join(names)), ("standardized", data.standardizer is not None)]
    if data.standardizer is not None:
        for name, m, s in zip(data.standardizer.names, data.standardizer.mean, data.standardizer.std):
            items.append((f"mean.{name}", float(m)))
            items.append((f"std.{name}", float(s)))
    for k, v in (extra or {}).items():
        items.append((k, v))
    write_kv(meta_path(path), items)


def read_dataset(path) -> ExceedanceDataset:
    """Inverse of :func:`write_dataset`."""
    if not os.path.exists(path):
        raise InvalidInputError(f"dataset file not found: {path}")
    mpath = meta_path(path)
    if not os.path.exists(mpath):
        raise InvalidInputError(f"dataset metadata not found: {mpath}")
    meta = read_kv(mpath)
    try:
        mu = float(meta["mu"])
        intercept = parse_bool(meta.get("intercept", "true"))
    except KeyError as exc:
        raise InvalidInputError(f"{mpath}: missing key {exc}") from None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["date", "y"]:
            raise InvalidInputError(f"{path}: header must start with date,y")
        names = tuple(header[2:])
        dates, ys, xs = [], [], []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                ys.append(float(rec[1]))
                xs.append([float(v) for v in rec[2:]])
            except (ValueError, IndexError):
                raise InvalidInputError(f"{path}:{lineno}: malformed row") from None
            dates.append(rec[0])
    x = np.array(xs, dtype=float).reshape(len(ys), len(names))
    std = None
    if parse_bool(meta.get("standardized", "false")):
        std = Standardizer(names, np.array([float(meta[f"mean.{n}"]) for n in names]),
                           np.array([float(meta[f"std.{n}"]) for n in names]))
    if intercept:
        x = np.column_stack([np.ones(len(ys)), x])
        names = ("intercept",) + names
    return ExceedanceDataset(x, np.array(ys), mu, names, intercept, tuple(dates), std)
