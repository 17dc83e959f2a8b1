"""MAP estimation, cross-validated hyperparameter selection and fit metrics."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import FitFailureError, InvalidConfigError, InvalidInputError
from .model import ETA_CLAMP, ExceedanceDataset, GprParams, conditional_means, conditional_medians, \
    loglik_and_grad, log_likelihood
from .optim import bfgs
from .priors import Family, GramMatrix, LOG_XI_PRIOR_CONST, PriorSpec, _gprior_terms, log_prior
from .textio import parse_bool, read_kv, write_kv

log = logging.getLogger(__name__)

LASSO_ZERO_TOL = 1e-4
MEDIAN_FALLBACK_XI = 1.0 - 1e-3

DEFAULT_GRIDS = {
    Family.LASSO: tuple(np.logspace(-3, 2, 11)),
    Family.RIDGE: tuple(np.logspace(-3, 2, 11)),
    Family.GPRIOR: tuple(np.logspace(-1, 4, 11)),
}


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``xi_starts`` are paired with ``beta = 0``; ``n_perturbed`` further starts
    draw ``beta ~ N(0, perturb_sd^2)`` from ``seed`` with ``xi = perturbed_xi``.
    """

    xi_starts: tuple = (-0.2, 0.1, 0.4)
    n_perturbed: int = 2
    perturb_sd: float = 0.1
    perturbed_xi: float = 0.1
    gtol: float = 1e-6
    maxiter: int = 500
    seed: int = 0


@dataclass(frozen=True)
class FitResult:
    params: GprParams
    neg_log_lik: float
    aic: float
    bic: float
    df: int
    converged: bool
    n_iter: int
    n_restarts_used: int
    wall_time: float
    clamp_events: int
    spec: PriorSpec
    mu: float
    n_obs: int
    feature_names: tuple
    intercept: bool = True
    neg_log_post: float = math.nan
    grad_norm: float = math.nan
    message: str = ""

    @property
    def beta(self):
        return self.params.beta

    @property
    def xi(self):
        return self.params.xi

    @property
    def hyper(self):
        return self.spec.hyper


def information_criteria(neg_log_lik, df, n):
    """Return ``(aic, bic)`` computed from the likelihood alone."""
    return 2.0 * neg_log_lik + 2.0 * df, 2.0 * neg_log_lik + df * math.log(n)


class _Objective:
    """Negative log-posterior over theta = (beta, xi) with cached prior terms."""

    def __init__(self, data: ExceedanceDataset, spec: PriorSpec, gram: GramMatrix | None):
        self.x, self.y, self.mu = data.x, data.y, data.mu
        self.p = data.p
        self.spec = spec
        self.fam = spec.family
        self.mask = spec.shrunk_mask(data.p, data.intercept)
        self.k = int(self.mask.sum())
        if self.fam is Family.GPRIOR:
            if gram is None:
                gram = GramMatrix.from_design(data.x)
            if gram.p != data.p:
                raise InvalidInputError("gram matrix does not match the design")
            self.gterms = _gprior_terms(gram, self.mask, spec.g)
        self.xi_prior = self.fam is not Family.FLAT

    def prior(self, beta, xi):
        """Log-prior and its gradient (beta, xi) with the subgradient 0 at beta_j = 0."""
        b = beta[self.mask]
        gb = np.zeros(self.p)
        fam = self.fam
        if fam is Family.CAUCHY:
            lp = -self.k * math.log(math.pi) - np.sum(np.log1p(b * b))
            gb[self.mask] = -2.0 * b / (1.0 + b * b)
        elif fam is Family.LASSO:
            lam = self.spec.lam
            lp = self.k * math.log(lam / 2.0) - lam * np.sum(np.abs(b))
            gb[self.mask] = -lam * np.sign(b)
        elif fam is Family.RIDGE:
            tau = self.spec.tau
            lp = 0.5 * self.k * (math.log(tau) - math.log(2.0 * math.pi)) - 0.5 * tau * (b @ b)
            gb[self.mask] = -tau * b
        elif fam is Family.GPRIOR:
            pb = self.gterms.precision @ b
            lp = self.gterms.lognorm - 0.5 * (b @ pb)
            gb[self.mask] = -pb
        else:
            lp = 0.0
        gx = 0.0
        if self.xi_prior:
            lp += LOG_XI_PRIOR_CONST - math.log1p(xi * xi)
            gx = -2.0 * xi / (1.0 + xi * xi)
        return float(lp), gb, gx

    def __call__(self, theta):
        beta, xi = theta[:-1], float(theta[-1])
        if not xi < 1.0 or not np.all(np.isfinite(theta)):
            return math.inf, None
        ll, gl, gxl = loglik_and_grad(self.x, self.y, self.mu, beta, xi)
        if not math.isfinite(ll):
            return math.inf, None
        lp, gp, gxp = self.prior(beta, xi)
        g = np.empty(self.p + 1)
        g[:-1] = -(gl + gp)
        g[-1] = -(gxl + gxp)
        return -(ll + lp), g

    def stationarity(self, theta, g):
        """Norm of the minimum-norm subgradient (differs from |g| only for Lasso zeros)."""
        if self.fam is not Family.LASSO:
            return float(np.linalg.norm(g))
        g = g.copy()
        zero = self.mask & (theta[:-1] == 0.0)
        if np.any(zero):
            gz = g[:-1][zero]
            g[:-1][zero] = np.sign(gz) * np.maximum(np.abs(gz) - self.spec.lam, 0.0)
        return float(np.linalg.norm(g))


def neg_log_posterior(data: ExceedanceDataset, params: GprParams, spec: PriorSpec,
                      gram: GramMatrix | None = None) -> float:
    """``-(log-likelihood + log-prior)``; ``+inf`` outside the support."""
    if len(params.beta) != data.p:
        raise InvalidInputError(f"beta has {len(params.beta)} entries, design has {data.p} columns")
    if spec.family is Family.GPRIOR and gram is None:
        gram = GramMatrix.from_design(data.x)
    ll = log_likelihood(data, params)
    lp = log_prior(params.beta, params.xi, spec, gram, data.intercept)
    if not (math.isfinite(ll) and math.isfinite(lp)):
        return math.inf
    return -(ll + lp)


def _starts(data: ExceedanceDataset, opts: FitOptions):
    p = data.p
    out = [np.append(np.zeros(p), xi) for xi in opts.xi_starts]
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.n_perturbed):
        out.append(np.append(rng.normal(0.0, opts.perturb_sd, p), opts.perturbed_xi))
    return out


def _lasso_refine(obj: _Objective, theta, f, opts: FitOptions):
    """Snap near-zero shrunk coefficients to exact zeros where the
    subgradient condition allows it, then re-solve over the rest."""
    n_iter = 0
    for _ in range(5):
        beta = theta[:-1]
        cand = obj.mask & (np.abs(beta) < 1e-2) & (beta != 0.0)
        if not np.any(cand):
            break
        trial = theta.copy()
        trial[:-1][cand] = 0.0
        ft, gt = obj(trial)
        if not math.isfinite(ft):
            break
        zero = obj.mask & (trial[:-1] == 0.0)
        # keep at zero only coordinates whose smooth gradient lies inside [-lam, lam]
        gsmooth = gt[:-1]
        keep = zero & (np.abs(gsmooth) <= obj.spec.lam)
        trial[:-1][zero & ~keep] = theta[:-1][zero & ~keep]
        free = np.append(~keep, True)

        def fg_free(z, _trial=trial, _free=free):
            full = _trial.copy()
            full[_free] = z
            fv, gv = obj(full)
            return fv, (None if gv is None else gv[_free])

        try:
            res = bfgs(fg_free, trial[free], gtol=opts.gtol, maxiter=opts.maxiter)
        except ValueError:
            break
        n_iter += res.n_iter
        new = trial.copy()
        new[free] = res.x
        if res.fun <= f + 1e-10 * max(1.0, abs(f)):
            unchanged = np.array_equal(new == 0.0, theta == 0.0)
            theta, f = new, res.fun
            if unchanged:
                break
        else:
            break
    return theta, f, n_iter


def fit_map(data: ExceedanceDataset, spec: PriorSpec, opts: FitOptions | None = None,
            gram: GramMatrix | None = None) -> FitResult:
    """Maximum a posteriori fit by multi-start BFGS.

    Returns the best optimum over all feasible starts.  ``neg_log_lik``,
    AIC and BIC exclude the prior.  Raises FitFailureError when no start
    produced a finite optimum.
    """
    opts = opts or FitOptions()
    t0 = time.perf_counter()
    obj = _Objective(data, spec, gram)
    best = None
    diagnostics = []
    used = 0
    total_iter = 0
    for i, x0 in enumerate(_starts(data, opts)):
        f0, _ = obj(x0)
        if not math.isfinite(f0):
            diagnostics.append({"start": i, "status": "infeasible start"})
            continue
        used += 1
        res = bfgs(obj, x0, gtol=opts.gtol, maxiter=opts.maxiter, grad_norm=obj.stationarity)
        total_iter += res.n_iter
        theta, f = res.x, res.fun
        if spec.family is Family.LASSO:
            theta, f, extra = _lasso_refine(obj, theta, f, opts)
            total_iter += extra
        diagnostics.append({"start": i, "status": res.message, "f": f})
        if math.isfinite(f) and (best is None or f < best[1]):
            best = (theta, f)
    if best is None:
        raise FitFailureError(f"all {len(diagnostics)} starts failed", diagnostics)
    theta, f = best
    _, g = obj(theta)
    gnorm = obj.stationarity(theta, g)
    params = GprParams(theta[:-1], float(theta[-1]))
    nll = -log_likelihood(data, params)
    df = degrees_of_freedom(params.beta, spec, data.intercept)
    aic, bic = information_criteria(nll, df, data.n)
    clamps = int(np.sum(np.abs(data.x @ params.beta) > ETA_CLAMP))
    if clamps:
        log.warning("linear predictor clamped on %d rows at the optimum", clamps)
    return FitResult(
        params=params, neg_log_lik=nll, aic=aic, bic=bic, df=df,
        converged=bool(gnorm < opts.gtol and math.isfinite(f)), n_iter=total_iter,
        n_restarts_used=used, wall_time=time.perf_counter() - t0, clamp_events=clamps,
        spec=spec, mu=data.mu, n_obs=data.n, feature_names=data.feature_names,
        intercept=data.intercept, neg_log_post=f, grad_norm=gnorm,
        message=f"best of {used} starts",
    )


def degrees_of_freedom(beta, spec: PriorSpec, intercept: bool) -> int:
    """Parameter count for AIC/BIC; Lasso counts only non-zero shrunk coefficients."""
    beta = np.asarray(beta)
    if spec.family is not Family.LASSO:
        return beta.size + 1
    mask = spec.shrunk_mask(beta.size, intercept)
    return int(np.sum(np.abs(beta[mask]) > LASSO_ZERO_TOL)) + int(np.sum(~mask)) + 1


def predict(x, fit: FitResult):
    """Conditional-mean point forecasts for the rows of ``x``.

    Returns ``(values, used_median)``; near ``xi = 1`` the mean blows up and
    the conditional median is returned instead with ``used_median`` set.
    """
    if isinstance(x, ExceedanceDataset):
        x = x.x
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if fit.params.xi >= MEDIAN_FALLBACK_XI:
        return conditional_medians(x, fit.params, fit.mu), True
    return conditional_means(x, fit.params, fit.mu), False


def rmse(y, yhat) -> float:
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def evaluate(fit: FitResult, test: ExceedanceDataset) -> dict:
    """Test-set RMSE plus the training AIC/BIC carried by the fit."""
    yhat, _ = predict(test.x, fit)
    return {"rmse": rmse(test.y, yhat), "aic": fit.aic, "bic": fit.bic}


@dataclass(frozen=True)
class CvConfig:
    n_folds: int = 5
    grid: tuple | None = None
    seed: int = 0
    loss: str = "rmse"

    def __post_init__(self):
        if self.n_folds < 2:
            raise InvalidConfigError("need at least 2 folds")
        if self.grid is not None:
            g = tuple(float(v) for v in self.grid)
            if not g or any(not (v > 0 and math.isfinite(v)) for v in g):
                raise InvalidConfigError("grid must be non-empty and strictly positive")
            object.__setattr__(self, "grid", g)
        if self.loss != "rmse":
            raise InvalidConfigError(f"unsupported CV loss {self.loss!r}")


@dataclass(frozen=True)
class CvResult:
    family: Family
    selected: float
    grid: tuple
    mean_loss: tuple
    fold_loss: tuple = field(repr=False)

    def table(self):
        return [{"value": v, "rmse": m} for v, m in zip(self.grid, self.mean_loss)]


def fold_indices(n: int, n_folds: int, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_folds)]


def cross_validate(data: ExceedanceDataset, family, cfg: CvConfig | None = None,
                   opts: FitOptions | None = None, shrink_intercept: bool = False) -> CvResult:
    """K-fold selection of the prior hyperparameter by out-of-fold RMSE.

    Ties go to the stronger prior (larger lambda or tau, smaller g).
    """
    family = Family(family)
    if family.hyper_name is None:
        raise InvalidConfigError(f"the {family.value} prior has no tunable hyperparameter")
    cfg = cfg or CvConfig()
    grid = cfg.grid or DEFAULT_GRIDS[family]
    folds = fold_indices(data.n, cfg.n_folds, cfg.seed)
    for f in folds:
        if data.n - f.size < data.p + 2 or f.size == 0:
            raise InvalidConfigError(
                f"fold sizes leave {data.n - f.size} training rows; need {data.p + 2}")
    splits = []
    for f in folds:
        train_idx = np.setdiff1d(np.arange(data.n), f)
        tr = data.subset(train_idx)
        gram = GramMatrix.from_design(tr.x) if family is Family.GPRIOR else None
        splits.append((tr, data.subset(f, check_rows=False), gram))
    fold_loss = []
    for v in grid:
        spec = PriorSpec.from_hyper(family, v, shrink_intercept=shrink_intercept)
        losses = []
        for tr, te, gram in splits:
            try:
                fit = fit_map(tr, spec, opts, gram)
            except FitFailureError:
                losses.append(math.inf)
                continue
            yhat, _ = predict(te.x, fit)
            losses.append(rmse(te.y, yhat))
        fold_loss.append(tuple(losses))
    mean_loss = tuple(float(np.mean(l)) for l in fold_loss)
    # strongest regularisation first so that ties resolve towards it
    order = sorted(range(len(grid)), key=lambda i: grid[i], reverse=family is not Family.GPRIOR)
    best = min(order, key=lambda i: mean_loss[i])
    return CvResult(family, float(grid[best]), tuple(grid), mean_loss, tuple(fold_loss))


# ---------------------------------------------------------------------------
# fit files

_FIT_NUMERIC = ("neg_log_lik", "aic", "bic", "wall_time", "neg_log_post", "grad_norm")
_FIT_INT = ("df", "n_iter", "n_restarts_used", "clamp_events", "n_obs")


def write_fit(path, fit: FitResult, extra=None) -> None:
    """Serialise a fit as ``key = value`` lines; coefficients keyed ``beta.<name>``.

    ``extra`` items (metrics, standardiser moments, provenance) are appended
    and come back from :func:`read_fit_meta`.
    """
    items = [("prior", fit.spec.family.value),
             ("hyper", math.nan if fit.hyper is None else float(fit.hyper)),
             ("shrink_intercept", fit.spec.shrink_intercept),
             ("mu", fit.mu), ("intercept", fit.intercept),
             ("features", ",".join(fit.feature_names))]
    items += [(f"beta.{n}", float(b)) for n, b in zip(fit.feature_names, fit.beta)]
    items.append(("xi", fit.xi))
    items += [(k, float(getattr(fit, k))) for k in _FIT_NUMERIC]
    items += [(k, int(getattr(fit, k))) for k in _FIT_INT]
    items.append(("converged", fit.converged))
    items += list((extra or {}).items())
    write_kv(path, items)


def read_fit_meta(path) -> dict:
    if not os.path.exists(path):
        raise InvalidInputError(f"fit file not found: {path}")
    return read_kv(path)


def read_fit(path) -> FitResult:
    """Rebuild the :class:`FitResult` written by :func:`write_fit`."""
    kv = read_fit_meta(path)
    try:
        names = tuple(kv["features"].split(","))
        hyper = float(kv["hyper"])
        spec = PriorSpec.from_hyper(kv["prior"], None if math.isnan(hyper) else hyper,
                                    shrink_intercept=parse_bool(kv["shrink_intercept"]))
        params = GprParams(np.array([float(kv[f"beta.{n}"]) for n in names]), float(kv["xi"]))
        return FitResult(
            params=params, spec=spec, mu=float(kv["mu"]), feature_names=names,
            intercept=parse_bool(kv["intercept"]), converged=parse_bool(kv["converged"]),
            message="loaded from " + str(path),
            **{k: float(kv[k]) for k in _FIT_NUMERIC}, **{k: int(kv[k]) for k in _FIT_INT},
        )
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed fit file ({exc})") from None
