"""Generalized Pareto calculus in the (shape, log-scale) parametrization.

Everything is written in terms of ``s = y / sigma`` and ``x = gamma * s``.  The
expressions that cancel catastrophically as ``x -> 0`` (which covers the
exponential limit ``gamma -> 0``) are evaluated through power series in ``x``
below ``SERIES_SWITCH``.

Sign convention: the "scores" are derivatives of the *negative* log density,
``l_gamma = d/dgamma {-log h}`` and ``l_sigma = d/dlog(sigma) {-log h}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SERIES_SWITCH = 1e-2
_N_SERIES = 14

# power-series coefficients in x of the three cancellation-prone kernels
_n = np.arange(_N_SERIES)
_LOG1P_OVER_X = (-1.0) ** _n / (_n + 1)  # log1p(x) / x
_F1 = (-1.0) ** (_n + 1) * (_n + 1) / (_n + 2)  # (x/(1+x) - log1p(x)) / x^2
_F3 = (-1.0) ** _n * (2.0 / (_n + 3) + _n)  # 2 log1p(x)/x^3 - 2/(x^2 (1+x)) - 1/(x (1+x)^2)


class GpdSupportError(ValueError):
    """Observation outside the support of the distribution."""


class GpdParameterError(ValueError):
    """Parameter outside the admissible range."""


@dataclass(frozen=True)
class GpdPoint:
    gamma: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise GpdParameterError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class GpdOrthoPoint:
    """Orthogonal parametrization with ``varsigma = sigma * (gamma + 1)``."""

    gamma: float
    varsigma: float

    def __post_init__(self):
        if not self.varsigma > 0:
            raise GpdParameterError(f"varsigma must be positive, got {self.varsigma}")
        if not self.gamma > -1:
            raise GpdParameterError(f"orthogonal family needs gamma > -1, got {self.gamma}")

    @property
    def sigma(self) -> float:
        return self.varsigma / (self.gamma + 1.0)


def _series(coef, x):
    return np.polynomial.polynomial.polyval(x, coef)


def _kernels(x):
    """Return ``log1p(x)/x``, ``f1(x)`` and ``f3(x)`` stably."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_SWITCH
    xs = np.where(small, 1.0, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log1p(xs)
        g0 = np.where(small, _series(_LOG1P_OVER_X, x), L / xs)
        f1 = np.where(small, _series(_F1, x), (xs / (1 + xs) - L) / xs**2)
        f3 = np.where(
            small,
            _series(_F3, x),
            2 * L / xs**3 - 2 / (xs**2 * (1 + xs)) - 1 / (xs * (1 + xs) ** 2),
        )
    return g0, f1, f3


def nll_terms(gamma, logsigma, y, hessian=True):
    """Negative log density and its derivatives in ``(gamma, log sigma)``.

    Vectorized over broadcastable arrays.  Infeasible points (``1 + gamma*y/sigma <= 0``)
    give ``inf`` in the value and ``nan`` elsewhere; callers decide whether that is
    an error.

    Returns
    -------
    tuple
        ``(nll, d_gamma, d_logsigma)`` and, if ``hessian``, additionally
        ``(d2_gamma_gamma, d2_gamma_logsigma, d2_logsigma_logsigma)``.
    """
    gamma, logsigma, y = np.broadcast_arrays(
        np.asarray(gamma, float), np.asarray(logsigma, float), np.asarray(y, float)
    )
    s = y * np.exp(-logsigma)
    x = gamma * s
    feasible = (1.0 + x > 0.0) & (y > 0.0)
    xf = np.where(feasible, x, 0.0)
    g0, f1, f3 = _kernels(xf)
    a = 1.0 + xf
    nll = np.where(feasible, logsigma + (1.0 + gamma) * s * g0, np.inf)
    d_g = s**2 * f1 + s / a
    d_t = 1.0 - (1.0 + gamma) * s / a
    out = [nll, np.where(feasible, d_g, np.nan), np.where(feasible, d_t, np.nan)]
    if hessian:
        h_gg = s**3 * f3 - s**2 / a**2
        h_gt = s * (s - 1.0) / a**2
        h_tt = (1.0 + gamma) * s / a**2
        out += [np.where(feasible, h, np.nan) for h in (h_gg, h_gt, h_tt)]
    return tuple(out)


def nll_terms_ortho(gamma, logvarsigma, y, hessian=True):
    """Same as :func:`nll_terms` for the orthogonal density, in ``(gamma, log varsigma)``.

    Uses ``log sigma = log varsigma - log(1 + gamma)`` and the chain rule.
    Points with ``gamma <= -1`` are infeasible.
    """
    gamma = np.asarray(gamma, float)
    ok = gamma > -1.0
    gsafe = np.where(ok, gamma, 0.0)
    c = 1.0 / (1.0 + gsafe)
    terms = nll_terms(gsafe, np.asarray(logvarsigma, float) + np.log(c), y, hessian)
    nll, d_g, d_t = terms[:3]
    nll = np.where(ok, nll, np.inf)
    out = [nll, np.where(ok, d_g - c * d_t, np.nan), np.where(ok, d_t, np.nan)]
    if hessian:
        h_gg, h_gt, h_tt = terms[3:]
        hg = h_gg - 2 * c * h_gt + c**2 * (h_tt + d_t)
        hx = h_gt - c * h_tt
        out += [np.where(ok, h, np.nan) for h in (hg, hx, h_tt)]
    return tuple(out)


def _checked(terms, y):
    if np.any(np.asarray(y) <= 0):
        raise GpdSupportError("observations must be positive")
    if np.any(~np.isfinite(terms[0])):
        raise GpdSupportError("observation outside the support (1 + gamma*y/sigma <= 0)")
    return terms


def _unwrap(v):
    return float(v) if np.ndim(v) == 0 else v


def gpd_logpdf(p: GpdPoint, y):
    """log h(y | gamma, sigma)."""
    t = _checked(nll_terms(p.gamma, np.log(p.sigma), y, hessian=False), y)
    return _unwrap(-t[0])


def score_gamma(p: GpdPoint, y):
    t = _checked(nll_terms(p.gamma, np.log(p.sigma), y, hessian=False), y)
    return _unwrap(t[1])


def score_logsigma(p: GpdPoint, y):
    t = _checked(nll_terms(p.gamma, np.log(p.sigma), y, hessian=False), y)
    return _unwrap(t[2])


def ortho_logpdf(p: GpdOrthoPoint, y):
    """log of ``(gamma+1)/varsigma * (1 + gamma (gamma+1) y / varsigma)^(-1/gamma - 1)``."""
    t = _checked(nll_terms_ortho(p.gamma, np.log(p.varsigma), y, hessian=False), y)
    return _unwrap(-t[0])


def score_gamma_ortho(p: GpdOrthoPoint, y):
    t = _checked(nll_terms_ortho(p.gamma, np.log(p.varsigma), y, hessian=False), y)
    return _unwrap(t[1])


def score_logvarsigma(p: GpdOrthoPoint, y):
    t = _checked(nll_terms_ortho(p.gamma, np.log(p.varsigma), y, hessian=False), y)
    return _unwrap(t[2])


def fisher_info(gamma: float) -> np.ndarray:
    """Expected outer product of ``(l_gamma, l_sigma)`` per observation."""
    if not gamma > -0.5:
        raise GpdParameterError(f"Fisher information requires gamma > -1/2, got {gamma}")
    c = 1.0 / (2 * gamma + 1)
    return c * np.array([[2 / (gamma + 1), 1 / (gamma + 1)], [1 / (gamma + 1), 1.0]])


def fisher_info_ortho(gamma: float) -> np.ndarray:
    """Fisher information of ``(gamma, log varsigma)``; diagonal."""
    if not gamma > -0.5:
        raise GpdParameterError(f"Fisher information requires gamma > -1/2, got {gamma}")
    return np.diag([1.0 / (gamma + 1) ** 2, 1.0 / (2 * gamma + 1)])


def gpd_quantile(gamma, sigma, u):
    """Inverse distribution function, vectorized; ``-sigma log(1-u)`` at ``gamma = 0``."""
    gamma, sigma, u = np.broadcast_arrays(np.asarray(gamma, float), np.asarray(sigma, float), np.asarray(u, float))
    e = -np.log1p(-u)  # standard exponential quantile
    x = gamma * e
    small = np.abs(x) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(small, e * (1 + x / 2), np.expm1(np.where(small, 0.0, x)) / np.where(small, 1.0, gamma))
    return sigma * q


def gpd_sample(p: GpdPoint, u):
    """Deterministic draw ``H^{-1}(u)`` for ``0 < u < 1``."""
    u = np.asarray(u, float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    return _unwrap(gpd_quantile(p.gamma, p.sigma, u))


def gpd_cdf(y, gamma, sigma):
    y, gamma, sigma = np.broadcast_arrays(np.asarray(y, float), np.asarray(gamma, float), np.asarray(sigma, float))
    s = np.maximum(y, 0.0) / sigma
    x = gamma * s
    with np.errstate(divide="ignore", invalid="ignore"):
        logsurv = np.where(1 + x > 0, -s * _kernels(np.where(1 + x > 0, x, 0.0))[0], -np.inf)
    return -np.expm1(logsurv)


# --- second-order diagnostics -------------------------------------------------

def _boxcox(x, a):
    """``(x^a - 1)/a`` with the ``log x`` limit at ``a = 0``."""
    lx = np.log(x)
    a = np.asarray(a, float)
    small = np.abs(a * lx) < 1e-10
    safe = np.where(small, 1.0, a)
    return np.where(small, lx * (1 + a * lx / 2), np.expm1(safe * lx) / safe)


def eval_Qtilde(x, gamma: float, rho: float):
    """Second-order limit function ``(1/rho) [h_{gamma+rho}(x) - h_gamma(x)]``.

    ``h_a(x) = (x^a - 1)/a``.  At ``rho = 0`` the limit is ``d h_a / da`` at ``a = gamma``.
    """
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ValueError("Qtilde is defined for x > 0")
    if rho > 0:
        raise ValueError("second-order parameter must satisfy rho <= 0")
    if rho == 0.0:
        lx = np.log(x)
        t = gamma * lx
        small = np.abs(t) < 1e-3
        ts = np.where(small, 1.0, t)
        # (t e^t - e^t + 1) / t^2, series sum_k (k+1) t^k / (k+2)! near 0
        ratio = np.where(small, 0.5 + t / 3 + t**2 / 8 + t**3 / 30, (ts * np.exp(ts) - np.expm1(ts)) / ts**2)
        out = lx**2 * ratio
    else:
        out = (_boxcox(x, gamma + rho) - _boxcox(x, gamma)) / rho
    return _unwrap(out)


def eval_Q(y, gamma: float, rho: float):
    """``Hbar(y)^{1+gamma} Qtilde(1/Hbar(y))`` for the standard GPD tail ``Hbar``."""
    y = np.asarray(y, float)
    if np.any(y < 0) or (gamma < 0 and np.any(1 + gamma * y <= 0)):
        raise ValueError("y outside the support of H")
    surv = np.exp(-y * _kernels(gamma * y)[0])
    return _unwrap(surv ** (1 + gamma) * np.asarray(eval_Qtilde(1.0 / surv, gamma, rho)))
