"""Plug-in covariances and pointwise confidence intervals.

The variance of the linear predictors at ``(x, z)`` is ``D^T H^{-1} D`` with
``D = blockdiag(A(x, z), A(x, z))`` and ``H`` the penalized Hessian at the
estimate (a sum over observations, so no further division by n).  Intervals
are variance-only: smoothing bias is not estimated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .design import AdditiveDesign, build_design_row
from .fitter import FitResult
from .pot import ExceedanceSample


class InferenceUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class PointwiseCI:
    gamma_hat: float
    scale_hat: float
    se_gamma: float
    se_scale_rel: float
    level: float
    gamma_lo: float
    gamma_hi: float
    scale_lo: float
    scale_hi: float


def _cholesky(H):
    try:
        return linalg.cho_factor(H, check_finite=False)
    except linalg.LinAlgError:
        lam = float(np.linalg.eigvalsh(H)[0])
        raise InferenceUnavailableError(
            f"penalized Hessian is not positive definite (smallest eigenvalue {lam:.3e})"
        ) from None


def predictor_covariance(fit: FitResult, A: np.ndarray) -> np.ndarray:
    """Covariances of ``(gamma, log scale)`` for every row of ``A``; shape ``(n, 2, 2)``."""
    q = A.shape[1]
    cho = _cholesky(fit.penalized_hessian)
    D = np.zeros((2 * q, 2 * A.shape[0]))
    D[:q, 0::2] = A.T
    D[q:, 1::2] = A.T
    S = linalg.cho_solve(cho, D, check_finite=False)
    out = np.empty((A.shape[0], 2, 2))
    out[:, 0, 0] = np.einsum("ij,ij->j", D[:, 0::2], S[:, 0::2])
    out[:, 1, 1] = np.einsum("ij,ij->j", D[:, 1::2], S[:, 1::2])
    out[:, 0, 1] = out[:, 1, 0] = np.einsum("ij,ij->j", D[:, 0::2], S[:, 1::2])
    return out


def asymptotic_covariance(fit: FitResult, design: AdditiveDesign, x, z) -> np.ndarray:
    """2x2 covariance of ``(gamma_hat, log scale_hat)`` at one point."""
    a = build_design_row(design, x, z)
    return predictor_covariance(fit, a[None, :])[0]


def parametric_covariance(fit: FitResult, design: AdditiveDesign, data: ExceedanceSample) -> np.ndarray:
    """Asymptotic covariance of ``sqrt(n) (beta_hat - beta, u_hat - u)``.

    Built from expected-information weights at the fitted shape, averaging
    ``x x^T`` over training points, then inverted.  The orthogonal family has
    a block-diagonal information matrix.
    """
    x = data.x - design.x_mean
    g = fit.gamma_hat
    if np.any(g <= -0.5):
        raise InferenceUnavailableError("expected information needs fitted shape > -1/2 everywhere")
    n, p = x.shape
    xx = np.einsum("ni,nj->nij", x, x)

    def avg(w):
        return np.einsum("n,nij->ij", w, xx) / n

    if design.spec.reparam:
        S_gg, S_gs, S_ss = avg(1 / (g + 1) ** 2), np.zeros((p, p)), avg(1 / (2 * g + 1))
    else:
        c = 1 / (2 * g + 1)
        S_gg, S_gs, S_ss = avg(2 * c / (g + 1)), avg(c / (g + 1)), avg(c)
    S = np.block([[S_gg, S_gs], [S_gs.T, S_ss]])
    try:
        return linalg.inv(S)
    except linalg.LinAlgError:
        raise InferenceUnavailableError("parametric information matrix is singular") from None


def pointwise_ci(fit: FitResult, design: AdditiveDesign, x, z, level: float = 0.95) -> PointwiseCI:
    """Normal interval for the shape and a log-scale (delta method) interval for the scale."""
    return pointwise_ci_many(fit, design, np.atleast_2d(x), np.atleast_2d(z), level)[0]


def pointwise_ci_many(fit: FitResult, design: AdditiveDesign, x, z, level: float = 0.95) -> list[PointwiseCI]:
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    A = design.design_matrix(x, z)
    gamma, eta = design.predictors(fit.theta, A)
    cov = predictor_covariance(fit, A)
    se_g = np.sqrt(np.maximum(cov[:, 0, 0], 0.0))
    se_l = np.sqrt(np.maximum(cov[:, 1, 1], 0.0))
    zq = stats.norm.ppf((1 + level) / 2)
    return [
        PointwiseCI(
            gamma_hat=float(g), scale_hat=float(np.exp(e)), se_gamma=float(sg), se_scale_rel=float(sl),
            level=level, gamma_lo=float(g - zq * sg), gamma_hi=float(g + zq * sg),
            scale_lo=float(np.exp(e - zq * sl)), scale_hi=float(np.exp(e + zq * sl)),
        )
        for g, e, sg, sl in zip(gamma, eta, se_g, se_l)
    ]
