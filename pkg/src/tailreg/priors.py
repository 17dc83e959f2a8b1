"""Log-prior densities for the shape parameter and the regression coefficients.

Every density keeps its exact normalising constant.  Coefficient priors are
applied to the *shrunk* coefficients only; when the design carries an
intercept (always column 0) it gets a flat prior unless
``PriorSpec.shrink_intercept`` is set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInputError

LOG_XI_PRIOR_CONST = math.log(4.0) - math.log(3.0 * math.pi)
_LOG_PI = math.log(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


class Family(str, Enum):
    CAUCHY = "cauchy"
    LASSO = "lasso"
    RIDGE = "ridge"
    GPRIOR = "gprior"
    # no shrinkage on beta and no prior on xi; used for MLE cross-checks
    FLAT = "flat"

    @property
    def hyper_name(self):
        return {Family.LASSO: "lambda", Family.RIDGE: "tau", Family.GPRIOR: "g"}.get(self)

    @property
    def label(self):
        return {Family.CAUCHY: "Cauchy", Family.LASSO: "Lasso", Family.RIDGE: "Ridge",
                Family.GPRIOR: "g-prior", Family.FLAT: "Flat"}[self]


# Reporting order used by every comparison table.
FAMILY_ORDER = (Family.CAUCHY, Family.LASSO, Family.RIDGE, Family.GPRIOR)


@dataclass(frozen=True)
class PriorSpec:
    """Prior family plus the single hyperparameter that family needs."""

    family: Family
    lam: float | None = None
    tau: float | None = None
    g: float | None = None
    shrink_intercept: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        wanted = self.family.hyper_name
        for name, attr in (("lambda", "lam"), ("tau", "tau"), ("g", "g")):
            v = getattr(self, attr)
            if name == wanted:
                if v is None or not np.isfinite(v) or v <= 0:
                    raise InvalidInputError(f"{self.family.value} prior needs {name} > 0, got {v!r}")
            elif v is not None:
                raise InvalidInputError(f"{name} is not a hyperparameter of the {self.family.value} prior")

    @classmethod
    def cauchy(cls, **kw):
        return cls(Family.CAUCHY, **kw)

    @classmethod
    def lasso(cls, lam, **kw):
        return cls(Family.LASSO, lam=lam, **kw)

    @classmethod
    def ridge(cls, tau, **kw):
        return cls(Family.RIDGE, tau=tau, **kw)

    @classmethod
    def gprior(cls, g, **kw):
        return cls(Family.GPRIOR, g=g, **kw)

    @classmethod
    def flat(cls):
        return cls(Family.FLAT)

    @classmethod
    def from_hyper(cls, family, value=None, **kw):
        """Build a spec from a family name and its (optional) hyperparameter."""
        family = Family(family)
        key = {Family.LASSO: "lam", Family.RIDGE: "tau", Family.GPRIOR: "g"}.get(family)
        if key is not None:
            kw[key] = value
        return cls(family, **kw)

    @property
    def hyper(self):
        return {Family.LASSO: self.lam, Family.RIDGE: self.tau, Family.GPRIOR: self.g}.get(self.family)

    def shrunk_mask(self, p: int, intercept: bool) -> np.ndarray:
        """Boolean mask of coefficients that receive the shrinkage prior."""
        mask = np.ones(p, dtype=bool)
        if self.family is Family.FLAT:
            mask[:] = False
        elif intercept and not self.shrink_intercept:
            mask[0] = False
        return mask


@dataclass(frozen=True)
class GramMatrix:
    """(X'X)^-1 of a training design, frozen at construction."""

    xtx_inverse: np.ndarray

    def __post_init__(self):
        a = np.array(self.xtx_inverse, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError("gram matrix must be square")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("gram matrix has non-finite entries")
        if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(a))):
            raise InvalidInputError("gram matrix is not symmetric")
        a = 0.5 * (a + a.T)
        if np.linalg.eigvalsh(a)[0] <= 0:
            raise InvalidInputError("gram matrix is not positive definite")
        a.setflags(write=False)
        object.__setattr__(self, "xtx_inverse", a)

    @classmethod
    def from_design(cls, x) -> "GramMatrix":
        x = np.asarray(x, dtype=float)
        try:
            inv = np.linalg.inv(x.T @ x)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("design matrix is rank deficient") from exc
        return cls(0.5 * (inv + inv.T))

    @property
    def p(self):
        return self.xtx_inverse.shape[0]


class _GPriorTerms:
    """Precision and log-normaliser of N(0, g * Sigma_SS), cached per (gram, mask, g)."""

    __slots__ = ("precision", "lognorm")

    def __init__(self, gram: GramMatrix, mask: np.ndarray, g: float):
        cov = g * gram.xtx_inverse[np.ix_(mask, mask)]
        chol = np.linalg.cholesky(cov)
        k = cov.shape[0]
        self.lognorm = -0.5 * k * _LOG_2PI - np.sum(np.log(np.diag(chol)))
        self.precision = np.linalg.inv(cov)


_gprior_cache: dict = {}


def _gprior_terms(gram, mask, g):
    key = (id(gram), mask.tobytes(), g)
    hit = _gprior_cache.get(key)
    if hit is not None and hit[0] is gram:
        return hit[1]
    terms = _GPriorTerms(gram, mask, g)
    if len(_gprior_cache) > 256:
        _gprior_cache.clear()
    _gprior_cache[key] = (gram, terms)
    return terms


def log_prior_xi(xi: float) -> float:
    """Standard Cauchy truncated to ``xi < 1``, renormalised by 4/3."""
    if not np.isfinite(xi):
        raise InvalidInputError(f"xi must be finite, got {xi!r}")
    if xi >= 1.0:
        return -math.inf
    return LOG_XI_PRIOR_CONST - math.log1p(xi * xi)


def grad_log_prior_xi(xi: float) -> float:
    return -2.0 * xi / (1.0 + xi * xi)


def _check_beta(beta, spec, gram, intercept):
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1:
        raise InvalidInputError("beta must be a vector")
    if not np.all(np.isfinite(beta)):
        raise InvalidInputError("beta must be finite")
    mask = spec.shrunk_mask(beta.size, intercept)
    if spec.family is Family.GPRIOR:
        if gram is None:
            raise InvalidInputError("the g-prior needs the training gram matrix")
        if gram.p != beta.size:
            raise InvalidInputError(f"gram matrix is {gram.p}x{gram.p} but beta has {beta.size} entries")
    return beta, mask


def log_prior_beta(beta, spec: PriorSpec, gram: GramMatrix | None = None, intercept: bool = True) -> float:
    """Joint log-prior of the coefficient vector.

    Cauchy, Lasso and Ridge are independent products over the shrunk
    coefficients; the g-prior is the marginal of N(0, g (X'X)^-1) on them.
    """
    beta, mask = _check_beta(beta, spec, gram, intercept)
    b = beta[mask]
    fam = spec.family
    if fam is Family.FLAT or b.size == 0:
        return 0.0
    if fam is Family.CAUCHY:
        return float(-b.size * _LOG_PI - np.sum(np.log1p(b * b)))
    if fam is Family.LASSO:
        return float(b.size * math.log(spec.lam / 2.0) - spec.lam * np.sum(np.abs(b)))
    if fam is Family.RIDGE:
        return float(0.5 * b.size * (math.log(spec.tau) - _LOG_2PI) - 0.5 * spec.tau * (b @ b))
    terms = _gprior_terms(gram, mask, spec.g)
    return float(terms.lognorm - 0.5 * b @ terms.precision @ b)


def grad_log_prior_beta(beta, spec: PriorSpec, gram: GramMatrix | None = None, intercept: bool = True) -> np.ndarray:
    beta, mask = _check_beta(beta, spec, gram, intercept)
    out = np.zeros_like(beta)
    b = beta[mask]
    fam = spec.family
    if fam is Family.FLAT or b.size == 0:
        return out
    if fam is Family.CAUCHY:
        out[mask] = -2.0 * b / (1.0 + b * b)
    elif fam is Family.LASSO:
        # subgradient 0 at exactly zero
        out[mask] = -spec.lam * np.sign(b)
    elif fam is Family.RIDGE:
        out[mask] = -spec.tau * b
    else:
        out[mask] = -(_gprior_terms(gram, mask, spec.g).precision @ b)
    return out


def grad_log_prior(beta, xi, spec: PriorSpec, gram: GramMatrix | None = None, intercept: bool = True):
    """Gradient of ``log_prior_beta + log_prior_xi`` as ``(d_beta, d_xi)``.

    Under the flat family the shape prior is dropped too.
    """
    gb = grad_log_prior_beta(beta, spec, gram, intercept)
    gx = 0.0 if spec.family is Family.FLAT else grad_log_prior_xi(xi)
    return gb, gx


def log_prior(beta, xi, spec: PriorSpec, gram: GramMatrix | None = None, intercept: bool = True) -> float:
    lb = log_prior_beta(beta, spec, gram, intercept)
    if spec.family is Family.FLAT:
        return lb if xi < 1.0 else -math.inf
    return lb + log_prior_xi(xi)
