"""BFGS with a strong-Wolfe line search that treats ``+inf`` trial points as
overshoots and backtracks out of them."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class BfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    converged: bool
    message: str


def _interpolate(a_lo, f_lo, d_lo, a_hi, f_hi):
    """Minimiser of the quadratic through (a_lo, f_lo, d_lo) and (a_hi, f_hi),
    safeguarded into the inner 80% of the bracket; bisection if f_hi is inf."""
    width = a_hi - a_lo
    if math.isfinite(f_hi):
        denom = 2.0 * (f_hi - f_lo - d_lo * width)
        if denom > 0:
            a = a_lo - d_lo * width * width / denom
            lo, hi = sorted((a_lo + 0.1 * width, a_lo + 0.9 * width))
            if lo <= a <= hi:
                return a
    return a_lo + 0.5 * width


def line_search(fg, x, f0, g0, d, alpha1=1.0, c1=1e-4, c2=0.9, max_eval=30):
    """Return ``(alpha, f, g, n_eval)``; ``alpha`` is 0 when no acceptable step was found.

    Sufficient decrease is relaxed by a few ulps of ``f0`` so that steps near
    the optimum, where ``f`` differences drown in rounding, are still judged
    by the curvature condition.
    """
    dphi0 = float(g0 @ d)
    slack = 1e-14 * abs(f0)
    n_eval = 0

    def phi(a):
        nonlocal n_eval
        n_eval += 1
        f, g = fg(x + a * d)
        if not math.isfinite(f):
            return math.inf, None, math.nan
        return f, g, float(g @ d)

    best = (0.0, f0, g0)
    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha1
    lo = hi = None
    while n_eval < max_eval:
        f, g, dphi = phi(a)
        if f > f0 + c1 * a * dphi0 + slack or (a_prev > 0 and f > f_prev + slack):
            lo, hi = (a_prev, f_prev, d_prev), (a, f)
            break
        best = (a, f, g)
        if abs(dphi) <= -c2 * dphi0:
            return a, f, g, n_eval
        if dphi >= 0:
            lo, hi = (a, f, dphi), (a_prev, f_prev)
            break
        a_prev, f_prev, d_prev = a, f, dphi
        a *= 2.0
    else:
        return best[0], best[1], best[2], n_eval

    # zoom
    (a_lo, f_lo, d_lo), (a_hi, f_hi) = lo, hi
    while n_eval < max_eval:
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
        if a_hi > a_lo:
            a = _interpolate(a_lo, f_lo, d_lo, a_hi, f_hi)
        else:
            a = 0.5 * (a_lo + a_hi)
        f, g, dphi = phi(a)
        if f > f0 + c1 * a * dphi0 + slack or f > f_lo + slack:
            a_hi, f_hi = a, f
        else:
            best = (a, f, g)
            if abs(dphi) <= -c2 * dphi0:
                return a, f, g, n_eval
            if dphi * (a_hi - a_lo) >= 0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, d_lo = a, f, dphi
    return best[0], best[1], best[2], n_eval


def bfgs(fg, x0, gtol=1e-6, maxiter=500, ftol=1e-14, max_step=None, grad_norm=None):
    """Minimise ``fg(x) -> (f, grad)`` from a feasible ``x0``.

    ``f`` may be ``inf`` at infeasible points (``grad`` is then ignored).
    Stops when the gradient norm drops below ``gtol``, after ``maxiter``
    iterations, or when the line search can no longer decrease ``f``.
    ``grad_norm`` overrides how stationarity is measured (e.g. a
    subgradient-aware norm); it receives ``(x, g)``.
    """
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    if not math.isfinite(f):
        raise ValueError("starting point is infeasible")
    n = x.size
    H = np.eye(n)
    fresh = True
    n_eval = 1
    norm = grad_norm or (lambda _x, _g: float(np.linalg.norm(_g)))
    stall = 0
    best_gn = math.inf
    k = 0
    message = "maximum iterations reached"
    converged = False
    for k in range(1, maxiter + 1):
        gn = norm(x, g)
        best_gn = min(best_gn, gn)
        if gn < gtol:
            converged = True
            message = "gradient tolerance reached"
            k -= 1
            break
        d = -H @ g
        if not float(g @ d) < 0:
            H = np.eye(n)
            fresh = True
            d = -g
        alpha1 = 1.0
        if fresh:
            alpha1 = min(1.0, 1.0 / max(np.linalg.norm(d), 1e-300))
        if max_step is not None:
            dn = np.linalg.norm(d)
            alpha1 = min(alpha1, max_step / max(dn, 1e-300))
        alpha, f_new, g_new, ne = line_search(fg, x, f, g, d, alpha1)
        n_eval += ne
        if alpha == 0.0:
            if not fresh:
                H = np.eye(n)
                fresh = True
                continue
            message = "line search found no decrease"
            break
        s = alpha * d
        yv = g_new - g
        x = x + s
        df = f - f_new
        f, g = f_new, g_new
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if fresh:
                H = np.eye(n) * (sy / float(yv @ yv))
            rho = 1.0 / sy
            Hy = H @ yv
            H = H + ((sy + yv @ Hy) * rho * rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
            fresh = False
        # stalled: neither the objective nor the stationarity measure improves
        if df <= ftol * max(1.0, abs(f)) and norm(x, g) >= 0.5 * best_gn:
            stall += 1
            if stall >= 5:
                message = "objective stalled"
                break
        else:
            stall = 0
    else:
        k = maxiter
        if norm(x, g) < gtol:
            converged = True
            message = "gradient tolerance reached"
    return BfgsResult(x, float(f), g, k, n_eval, converged, message)
