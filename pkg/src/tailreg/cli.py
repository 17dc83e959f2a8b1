"""``tailreg`` command line.

Exit codes: 0 success, 2 usage error, 1 runtime failure.  Errors are
printed as a single line starting with ``tailreg: usage-error:`` or
``tailreg: error:``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from .errors import TailRegError
from .fitting import CvConfig, FitOptions, cross_validate, evaluate, fit_map, read_fit, read_fit_meta, write_fit
from .model import ExceedanceDataset, exceedance_prob
from .pipeline import (Standardizer, build_market_frame, build_tail_dataset, load_ohlc_csv, read_dataset,
                       split_train_test, write_dataset)
from .priors import FAMILY_ORDER, Family, GramMatrix, PriorSpec
from .report import crash_curve, curve_summary, fitted_vs_observed, write_table
from .simulation import SimConfig, default_threads, format_table, run_study, write_report
from .textio import fmt_float
from .volatility import ewma_volatility, garman_klass, log_returns

log = logging.getLogger("tailreg")
PROG = "tailreg"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _family_list(text):
    try:
        fams = tuple(Family(v.strip().lower()) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not fams or Family.FLAT in fams:
        raise argparse.ArgumentTypeError("choose from cauchy, lasso, ridge, gprior")
    return fams


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _asset(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    name, path = text.split("=", 1)
    return name.strip(), path.strip()


def _add_schema_flags(p):
    g = p.add_argument_group("input schema")
    g.add_argument("--date-col", default="date")
    g.add_argument("--open-col", default="open")
    g.add_argument("--high-col", default="high")
    g.add_argument("--low-col", default="low")
    g.add_argument("--close-col", default="close")
    g.add_argument("--date-format", default="iso",
                   help="iso, dayfirst, monthfirst, or a strptime pattern")
    g.add_argument("--delimiter", default=",")


def _load(args, path):
    return load_ohlc_csv(path, args.date_col, args.open_col, args.high_col, args.low_col,
                         args.close_col, args.date_format, args.delimiter)


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args):
    cfg = SimConfig(n_reps=args.reps, n_obs=args.n, p=args.p, mu=args.mu, seed=args.seed,
                    priors=args.priors, cv_folds=args.cv_folds, threads=args.threads)

    def progress(i, n):
        if args.verbose:
            print(f"replication {i}/{n}", file=sys.stderr)

    report = run_study(cfg, progress)
    paths = write_report(report, args.out_dir)
    print(format_table(report))
    print(f"wrote {', '.join(paths.values())}")
    return 0


# ---------------------------------------------------------------------------
# volatility

def cmd_volatility(args):
    bars = _load(args, args.input)
    if args.method == "ewma":
        vol = ewma_volatility(log_returns(bars.close), args.alpha, args.window, bars.dates[1:])
        flags = np.where(vol.missing, "warmup", "ok")
    else:
        vol = garman_klass(bars)
        flags = np.where(vol.clamped, "clamped", "ok")
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "value", "flag"))
        for d, v, f in zip(vol.dates, vol.value, flags):
            w.writerow((str(d), "" if math.isnan(v) else fmt_float(v), f))
    print(f"wrote {len(vol)} rows to {args.out} ({bars.dropped_rows} input rows dropped)")
    return 0


# ---------------------------------------------------------------------------
# build

def cmd_build(args):
    name, path = args.target
    assets = {name: _load(args, path)}
    for n, pth in args.asset or ():
        if n in assets:
            raise TailRegError(f"duplicate asset name {n!r}")
        assets[n] = _load(args, pth)
    frame = build_market_frame(assets, args.alpha, args.window)
    covs = args.covariates.split(",") if args.covariates else None
    log_cols = ()
    if args.log_gk:
        chosen = covs if covs is not None else [c for c in frame.names if c.endswith("_ewma")]
        log_cols = tuple(c for c in chosen if c.endswith("_gk"))
    data, _ = build_tail_dataset(frame, name, args.threshold, covs, not args.no_standardize,
                                 args.lag, log_cols)
    extra = {"target": name, "n_frame_rows": len(frame), "n_incomplete_rows": frame.n_incomplete,
             "tail_fraction": data.n / len(frame), "lag": args.lag}
    for a, b in assets.items():
        extra[f"dropped_rows.{a}"] = b.dropped_rows
        extra[f"unaligned_rows.{a}"] = frame.n_unaligned[a]
    write_dataset(args.out, data, extra)
    print(f"{data.n} tail days out of {len(frame)} aligned days ({100 * data.n / len(frame):.2f}%); "
          f"covariates: {', '.join(data.feature_names[1:]) or 'none'}")
    print(f"wrote {args.out} and {args.out}.meta")
    return 0


# ---------------------------------------------------------------------------
# fit / compare

def _prepare(args):
    data = read_dataset(args.data)
    if args.threshold is not None:
        if args.threshold < data.mu:
            raise TailRegError(f"--threshold {args.threshold} is below the dataset threshold {data.mu}")
        keep = np.flatnonzero(data.y > args.threshold)
        data = data.subset(keep).replace(mu=float(args.threshold))
    train, test = split_train_test(data, args.train_frac, args.seed, not args.full_sample_moments)
    return data, train, test


def _fit_one(family, train, args):
    hyper = None
    cv = None
    opts = FitOptions(seed=args.seed)
    if family.hyper_name is not None:
        grid = args.grid if args.grid else None
        cv = cross_validate(train, family, CvConfig(args.cv_folds, grid, args.seed), opts)
        hyper = cv.selected
    spec = PriorSpec.from_hyper(family, hyper)
    gram = GramMatrix.from_design(train.x) if family is Family.GPRIOR else None
    return fit_map(train, spec, opts, gram), cv


def _median_row(train: ExceedanceDataset):
    row = np.median(train.x, axis=0)
    if train.intercept:
        row[0] = 1.0
    return row


def _fit_extra(train, test, fit, metrics, args):
    extra = {"rmse": metrics["rmse"], "n_train": train.n, "n_test": test.n, "seed": args.seed,
             "train_frac": args.train_frac, "data": os.path.abspath(args.data)}
    std = train.standardizer
    if std is not None:
        for n, m, s in zip(std.names, std.mean, std.std):
            extra[f"std.mean.{n}"] = float(m)
            extra[f"std.sd.{n}"] = float(s)
    return extra


def cmd_fit(args):
    _, train, test = _prepare(args)
    family = Family(args.prior)
    fit, cv = _fit_one(family, train, args)
    metrics = evaluate(fit, test)
    print(f"prior      {family.label}")
    if cv is not None:
        print(f"{family.hyper_name:<10} {cv.selected:.6g} (selected by {args.cv_folds}-fold CV)")
    for n, b in zip(fit.feature_names, fit.beta):
        print(f"beta[{n}] {b:.6f}")
    print(f"xi         {fit.xi:.6f}")
    print(f"df         {fit.df}")
    print(f"RMSE       {metrics['rmse']:.6f}")
    print(f"AIC        {metrics['aic']:.6f}")
    print(f"BIC        {metrics['bic']:.6f}")
    print(f"converged  {fit.converged}")
    extra = _fit_extra(train, test, fit, metrics, args)
    if args.crash_level is not None:
        p = exceedance_prob(_median_row(train), fit.params, fit.mu, args.crash_level)
        print(f"P(Y > {args.crash_level:g} | Y > {fit.mu:g}, median covariates) = {p:.6f}")
        extra["crash_level"] = args.crash_level
        extra["crash_prob_at_median"] = p
    if args.out:
        write_fit(args.out, fit, extra)
        print(f"wrote {args.out}")
    return 0


COMPARE_FIELDS = ("prior", "hyper", "rmse", "aic", "bic", "df", "xi", "converged")


def cmd_compare(args):
    _, train, test = _prepare(args)
    rows = []
    for family in FAMILY_ORDER:
        fit, cv = _fit_one(family, train, args)
        m = evaluate(fit, test)
        rows.append({"prior": family.value, "hyper": math.nan if cv is None else cv.selected,
                     "rmse": m["rmse"], "aic": m["aic"], "bic": m["bic"], "df": fit.df,
                     "xi": fit.xi, "converged": fit.converged})
    head = f"{'Prior':<10} {'RMSE':>10} {'AIC':>12} {'BIC':>12} {'df':>4} {'hyper':>10}"
    print(head)
    print("-" * len(head))
    for r in rows:
        hyp = "" if math.isnan(r["hyper"]) else f"{r['hyper']:.4g}"
        print(f"{Family(r['prior']).label:<10} {r['rmse']:>10.4f} {r['aic']:>12.4f} {r['bic']:>12.4f} "
              f"{r['df']:>4d} {hyp:>10}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COMPARE_FIELDS)
            for r in rows:
                w.writerow([r["prior"]] + [fmt_float(r[k]) for k in ("hyper", "rmse", "aic", "bic")]
                           + [r["df"], fmt_float(r["xi"]), "1" if r["converged"] else "0"])
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# report

def _restandardize(data: ExceedanceDataset, meta: dict) -> ExceedanceDataset:
    """Express ``data``'s covariates in the standardisation the fit was trained with."""
    if data.standardizer is None:
        return data
    names = data.standardizer.names
    if not all(f"std.mean.{n}" in meta for n in names):
        return data
    std = Standardizer(names, np.array([float(meta[f"std.mean.{n}"]) for n in names]),
                       np.array([float(meta[f"std.sd.{n}"]) for n in names]))
    cs = data.covariate_slice
    x = data.x.copy()
    x[:, cs] = std.transform(data.standardizer.inverse(data.x[:, cs]))
    return data.replace(x=x, standardizer=std)


def cmd_report(args):
    fit = read_fit(args.fit)
    data = _restandardize(read_dataset(args.data), read_fit_meta(args.fit))
    if abs(data.mu - fit.mu) > 0:
        keep = np.flatnonzero(data.y > fit.mu)
        data = data.subset(keep).replace(mu=fit.mu)
    cs = data.covariate_slice
    sweeps = args.sweep.split(",") if args.sweep else list(data.feature_names[cs])
    if not sweeps:
        raise TailRegError("the fit has no covariates to sweep")
    os.makedirs(args.out_dir, exist_ok=True)
    for col in sweeps:
        table = crash_curve(fit, data, col, args.y0, args.percentiles, args.pin_quantile)
        path = os.path.join(args.out_dir, f"crash_curve_{col}.csv")
        write_table(path, table)
        s = curve_summary(table)
        print(f"{col}: P(Y > {args.y0:g}) {s['prob_low']:.3f} at p{s['pct_low']:.0f} -> "
              f"{s['prob_high']:.3f} at p{s['pct_high']:.0f}; expected loss "
              f"{s['loss_low']:.2f} -> {s['loss_high']:.2f}")
        print(f"wrote {path}")
    path = os.path.join(args.out_dir, "fitted_vs_observed.csv")
    write_table(path, fitted_vs_observed(fit, data))
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog=PROG, description="Generalised Pareto regression for tail risk")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="run the prior-comparison simulation study")
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--p", type=int, default=5)
    s.add_argument("--mu", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--priors", type=_family_list, default=FAMILY_ORDER)
    s.add_argument("--cv-folds", type=int, default=5)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out-dir", default="sim_out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("volatility", help="EWMA or Garman-Klass volatility of one OHLC file")
    s.add_argument("--input", required=True)
    s.add_argument("--method", choices=("ewma", "gk"), default="ewma")
    s.add_argument("--alpha", type=float, default=0.9)
    s.add_argument("--window", type=int, default=21)
    s.add_argument("--out", required=True)
    _add_schema_flags(s)
    s.set_defaults(func=cmd_volatility)

    s = sub.add_parser("build", help="build an exceedance dataset from OHLC files")
    s.add_argument("--target", type=_asset, required=True, metavar="NAME=PATH")
    s.add_argument("--asset", type=_asset, action="append", metavar="NAME=PATH",
                   help="covariate asset (repeatable)")
    s.add_argument("--threshold", type=float, default=2.0, help="loss threshold in percent")
    s.add_argument("--covariates", default=None,
                   help="comma-separated frame columns (<asset>_ewma, <asset>_gk); default all *_ewma")
    s.add_argument("--no-standardize", action="store_true")
    s.add_argument("--lag", type=int, choices=(0, 1), default=0)
    s.add_argument("--log-gk", action="store_true", help="log-transform Garman-Klass covariates")
    s.add_argument("--alpha", type=float, default=0.9)
    s.add_argument("--window", type=int, default=21)
    s.add_argument("--out", required=True)
    _add_schema_flags(s)
    s.set_defaults(func=cmd_build)

    for name, func, helptext in (("fit", cmd_fit, "fit one prior"),
                                 ("compare", cmd_compare, "fit all four priors on one split")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data", required=True)
        if name == "fit":
            s.add_argument("--prior", choices=[f.value for f in FAMILY_ORDER], default="cauchy")
            s.add_argument("--crash-level", type=float, default=None)
        s.add_argument("--threshold", type=float, default=None)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--cv-folds", type=int, default=5)
        s.add_argument("--grid", type=_float_list, default=None)
        s.add_argument("--train-frac", type=float, default=0.8)
        s.add_argument("--full-sample-moments", action="store_true",
                       help="keep the full-sample standardisation instead of refitting on the training split")
        s.add_argument("--out", default=None)
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="crash-probability curves and fitted-vs-observed table")
    s.add_argument("--fit", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--sweep", default=None, help="comma-separated covariates; default all")
    s.add_argument("--y0", type=float, default=5.0)
    s.add_argument("--percentiles", type=_float_list, default=tuple(float(v) for v in range(5, 100, 5)))
    s.add_argument("--pin-quantile", type=float, default=0.5)
    s.add_argument("--out-dir", default="report_out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{PROG}: usage-error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "threads", "unset") is None:
        args.threads = default_threads()
    try:
        return args.func(args)
    except (TailRegError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
