"""Replicated simulation study comparing the four coefficient priors."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FitFailureError, InvalidConfigError
from .fitting import CvConfig, FitOptions, cross_validate, evaluate, fit_map, rmse
from .gpd import GpdParams, gpd_quantile
from .model import ExceedanceDataset, GprParams
from .priors import FAMILY_ORDER, Family, GramMatrix, PriorSpec

log = logging.getLogger(__name__)

METRICS = ("rmse_y", "rmse_beta", "rmse_xi", "aic", "bic")
TIMING = ("time_sec", "time_relative")


@dataclass(frozen=True)
class SimConfig:
    n_reps: int = 100
    n_obs: int = 100
    p: int = 5
    mu: float = 2.0
    xi_range: tuple = (-0.5, 0.5)
    train_frac: float = 0.8
    seed: int = 0
    priors: tuple = FAMILY_ORDER
    cv_folds: int = 5
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "priors", tuple(Family(f) for f in self.priors))
        if not 0 < self.train_frac < 1:
            raise InvalidConfigError("train_frac must lie in (0, 1)")
        if int(self.n_obs * self.train_frac) < self.p + 2:
            raise InvalidConfigError("training split too small for p coefficients plus the shape")
        lo, hi = self.xi_range
        if not -1 < lo < hi < 1:
            raise InvalidConfigError("xi_range must lie inside (-1, 1)")
        if self.n_reps < 1 or not self.priors:
            raise InvalidConfigError("need at least one replication and one prior")
        if Family.FLAT in self.priors:
            raise InvalidConfigError("the flat prior is not part of the study")


@dataclass
class Replication:
    train: ExceedanceDataset
    test: ExceedanceDataset
    truth: GprParams
    train_idx: np.ndarray
    test_idx: np.ndarray


def generate_replication(cfg: SimConfig, rep_index: int) -> Replication:
    """Synthetic dataset number ``rep_index``; depends only on ``(cfg.seed, rep_index)``.

    X ~ N(0, I_p) without an intercept column, beta ~ N(0, 1),
    xi ~ U(xi_range), y ~ GPD(mu, exp(X beta), xi).
    """
    rng = np.random.default_rng([cfg.seed, rep_index])
    x = rng.standard_normal((cfg.n_obs, cfg.p))
    beta = rng.standard_normal(cfg.p)
    xi = float(rng.uniform(*cfg.xi_range))
    sigma = np.exp(x @ beta)
    u = rng.random(cfg.n_obs)
    y = cfg.mu + sigma * (gpd_quantile(u, GpdParams(0.0, 1.0, xi)))
    # exact ties with the threshold (u == 0) would violate y > mu
    y = np.maximum(y, np.nextafter(cfg.mu, np.inf))
    perm = rng.permutation(cfg.n_obs)
    n_train = int(round(cfg.n_obs * cfg.train_frac))
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    names = tuple(f"x{j + 1}" for j in range(cfg.p))
    data_tr = ExceedanceDataset(x[tr], y[tr], cfg.mu, names, intercept=False)
    data_te = ExceedanceDataset(x[te], y[te], cfg.mu, names, intercept=False, check_rows=False)
    return Replication(data_tr, data_te, GprParams(beta, xi), tr, te)


def run_replication(cfg: SimConfig, rep_index: int) -> list[dict]:
    """Fit every configured prior on one replication; one row per prior."""
    rep = generate_replication(cfg, rep_index)
    rows = []
    for fam in cfg.priors:
        row = {"rep": rep_index, "prior": fam.value, "hyper": math.nan, "xi_true": rep.truth.xi,
               "failed": False, "converged": False}
        t0 = time.perf_counter()
        try:
            if fam.hyper_name is not None:
                cv = cross_validate(rep.train, fam, CvConfig(cfg.cv_folds, seed=cfg.seed + rep_index),
                                    FitOptions(seed=rep_index))
                spec = PriorSpec.from_hyper(fam, cv.selected)
                row["hyper"] = cv.selected
            else:
                spec = PriorSpec(fam)
            gram = GramMatrix.from_design(rep.train.x) if fam is Family.GPRIOR else None
            fit = fit_map(rep.train, spec, FitOptions(seed=rep_index), gram)
        except FitFailureError as exc:
            log.warning("rep %d prior %s failed: %s", rep_index, fam.value, exc)
            row.update(failed=True, time_sec=time.perf_counter() - t0)
            row.update({m: math.nan for m in METRICS})
            row.update(xi_hat=math.nan)
            rows.append(row)
            continue
        row["time_sec"] = time.perf_counter() - t0
        metrics = evaluate(fit, rep.test)
        row.update(
            rmse_y=metrics["rmse"],
            rmse_beta=rmse(fit.beta, rep.truth.beta),
            rmse_xi=abs(fit.xi - rep.truth.xi),
            aic=fit.aic, bic=fit.bic, xi_hat=fit.xi, converged=fit.converged, df=fit.df,
        )
        rows.append(row)
    return rows


def _run_one(args):
    return run_replication(*args)


@dataclass
class SimReport:
    config: SimConfig
    summary: dict  # family value -> {metric: median, ..., n_failed}
    rows: list = field(repr=False)

    def families(self):
        return [f for f in self.config.priors]


def summarize(rows, priors) -> dict:
    """Per-prior medians over non-failed rows; time relative to the Cauchy median."""
    out = {}
    for fam in priors:
        fam = Family(fam)
        ok = [r for r in rows if r["prior"] == fam.value and not r["failed"]]
        s = {m: float(np.median([r[m] for r in ok])) if ok else math.nan for m in METRICS + ("time_sec",)}
        s["n_failed"] = sum(1 for r in rows if r["prior"] == fam.value and r["failed"])
        s["n_ok"] = len(ok)
        out[fam.value] = s
    base = out.get(Family.CAUCHY.value, {}).get("time_sec", math.nan)
    for s in out.values():
        s["time_relative"] = s["time_sec"] / base if base and math.isfinite(base) else math.nan
    if Family.CAUCHY.value in out:
        out[Family.CAUCHY.value]["time_relative"] = 1.0
    return out


def default_threads():
    env = os.environ.get("TAILREG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_study(cfg: SimConfig, progress=None) -> SimReport:
    """Run every replication and aggregate with medians.

    Replications run in a process pool when ``cfg.threads > 1``; results are
    re-ordered by replication index so scheduling never changes the report.
    """
    jobs = [(cfg, r) for r in range(cfg.n_reps)]
    rows = []
    if cfg.threads > 1 and cfg.n_reps > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            for i, rep_rows in enumerate(pool.map(_run_one, jobs)):
                rows.extend(rep_rows)
                if progress:
                    progress(i + 1, cfg.n_reps)
    else:
        for i, job in enumerate(jobs):
            rows.extend(_run_one(job))
            if progress:
                progress(i + 1, cfg.n_reps)
    rows.sort(key=lambda r: (r["rep"], cfg.priors.index(Family(r["prior"]))))
    return SimReport(cfg, summarize(rows, cfg.priors), rows)


# ---------------------------------------------------------------------------
# output

ROW_LABELS = {
    "rmse_y": "RMSE (y)", "rmse_beta": "RMSE (beta)", "rmse_xi": "RMSE (xi)",
    "aic": "AIC", "bic": "BIC", "time_sec": "Time (sec)", "time_relative": "Time (relative)",
}

RAW_FIELDS = ("rep", "prior", "hyper", "xi_true", "xi_hat", "df", "converged", "failed") + METRICS
RAW_TIMING_FIELDS = ("rep", "prior", "time_sec")


def format_table(report: SimReport) -> str:
    """Metrics as rows, priors as columns."""
    fams = report.families()
    head = ["Metric"] + [f.label for f in fams]
    body = []
    for key in METRICS + TIMING:
        body.append([ROW_LABELS[key]] + [f"{report.summary[f.value][key]:.2f}" for f in fams])
    failed = [str(report.summary[f.value]["n_failed"]) for f in fams]
    if any(v != "0" for v in failed):
        body.append(["Failed fits"] + failed)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: " | ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r))
    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(head), rule] + [fmt(r) for r in body])


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def write_report(report: SimReport, out_dir) -> dict:
    """Write ``summary.csv``, ``raw.csv`` and ``timing.csv`` into ``out_dir``.

    Summary and raw files hold only seed-determined values; wall-clock
    numbers live in ``timing.csv`` so reruns produce identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{k}.csv") for k in ("summary", "raw", "timing")}
    fams = report.families()
    with open(paths["summary"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("prior",) + METRICS + ("n_ok", "n_failed"))
        for f in fams:
            s = report.summary[f.value]
            w.writerow([f.value] + [_fmt(s[m]) for m in METRICS] + [s["n_ok"], s["n_failed"]])
    with open(paths["raw"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_FIELDS)
        for r in report.rows:
            w.writerow([_fmt(r.get(k, math.nan)) for k in RAW_FIELDS])
    with open(paths["timing"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rep", "prior", "time_sec", "time_relative"))
        for f in fams:
            s = report.summary[f.value]
            w.writerow(["median", f.value, _fmt(s["time_sec"]), _fmt(s["time_relative"])])
        for r in report.rows:
            w.writerow([r["rep"], r["prior"], _fmt(r["time_sec"]), ""])
    return paths


def read_raw(path) -> list[dict]:
    """Parse ``raw.csv`` back into rows with native types."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k == "prior":
                    row[k] = v
                elif k in ("rep", "df"):
                    row[k] = int(v) if v not in ("", "nan") else None
                elif k in ("converged", "failed"):
                    row[k] = v == "1"
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows
