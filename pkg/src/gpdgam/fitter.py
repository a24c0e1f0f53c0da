"""Penalized maximum likelihood for the additive GPD model by damped Newton.

The objective is

    NLL(theta) + theta^T Omega theta

with ``Omega`` from :func:`gpdgam.design.build_penalty_block`, i.e. the
negative log-likelihood plus ``lam * sum_j int g_j^(m)^2 + nu * sum_j int s_j^(m)^2``.
Its Hessian is the observed-information matrix plus ``2 Omega``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .design import AdditiveDesign, ModelSpec, Theta, build_design, build_penalty_block
from .gpd import nll_terms, nll_terms_ortho
from .pot import ExceedanceSample
from .splines import DegenerateSampleError, KnotGrid

SHAPE_WARNING_LEVEL = -0.4
# below -1 the GPD likelihood is unbounded at the endpoint
SHAPE_FLOOR = -1.0
_ROUNDOFF = 16 * np.finfo(float).eps


class SingularFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 200
    grad_tol: float = 1e-8
    step_halving_max: int = 30
    init: str = "default"
    ridge: float = 1e-10

    def __post_init__(self):
        if self.max_iter < 1 or self.step_halving_max < 1:
            raise ValueError("iteration limits must be positive")
        if not self.grad_tol > 0 or self.ridge < 0:
            raise ValueError("grad_tol must be positive and ridge nonnegative")


@dataclass
class FitResult:
    theta: Theta
    converged: bool
    iterations: int
    final_grad_norm: float
    penalized_hessian: np.ndarray
    nll: float
    gamma_hat: np.ndarray
    scale_hat: np.ndarray
    warnings: list[str] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.gamma_hat.size

    def diagnostics(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_grad_norm": self.final_grad_norm,
            "objective": self.nll,
            "warnings": list(self.warnings),
        }


def default_knots(n: int, m: int = 2) -> int:
    """``ceil(n^{1/(2m+1)})`` interior knots."""
    return max(1, math.ceil(n ** (1.0 / (2 * m + 1)) - 1e-12))


def make_design(data: ExceedanceSample, K: int | None = None, xi: int = 3, m: int = 2,
                lam: float = 1.0, nu: float = 1.0, reparam: bool = False,
                center_x: bool = True, rescale_z: bool = False):
    """Build an :class:`AdditiveDesign` from training data.

    If a knot span carries no training points, ``K`` is reduced until the
    normalized bases exist; the returned warnings say so.
    """
    K = default_knots(data.n, m) if K is None else K
    if K < 1:
        raise ValueError(f"number of interior knots must be >= 1, got {K}")
    notes = []
    while True:
        spec = ModelSpec(data.p, data.d, KnotGrid(K, xi), m, lam, nu, reparam)
        try:
            return build_design(spec, data.x, data.z, center_x, rescale_z), notes
        except DegenerateSampleError as err:
            if K <= 1:
                raise
            notes.append(f"{err}; dropped to K={K - 1}")
            K -= 1


def _terms(reparam):
    return nll_terms_ortho if reparam else nll_terms


def _value(v, A, y, omega, reparam):
    q = A.shape[1]
    gamma = A @ v[:q]
    if gamma.min() <= SHAPE_FLOOR:
        return math.inf
    with np.errstate(over="ignore", invalid="ignore"):
        nll = _terms(reparam)(gamma, A @ v[q:], y, hessian=False)[0]
    total = float(nll.sum())
    if not math.isfinite(total):
        return math.inf
    return total + _penalty(v, omega)


def _penalty(v, omega):
    # a 1-d omega is the diagonal of the penalty in its eigenbasis
    return float(omega @ (v * v)) if omega.ndim == 1 else float(v @ omega @ v)


def _value_grad_hess(v, A, y, omega, reparam):
    q = A.shape[1]
    gamma = A @ v[:q]
    if gamma.min() <= SHAPE_FLOOR:
        return math.inf, None, None
    f, dg, dt, hgg, hgt, htt = _terms(reparam)(gamma, A @ v[q:], y)
    total = float(f.sum())
    if not math.isfinite(total):
        return math.inf, None, None
    grad = np.concatenate([A.T @ dg, A.T @ dt]) + 2 * (omega * v if omega.ndim == 1 else omega @ v)
    H = np.empty((2 * q, 2 * q))
    H[:q, :q] = A.T @ (hgg[:, None] * A)
    H[:q, q:] = A.T @ (hgt[:, None] * A)
    H[q:, :q] = H[:q, q:].T
    H[q:, q:] = A.T @ (htt[:, None] * A)
    H = 0.5 * (H + H.T)
    if omega.ndim == 1:
        H[np.diag_indices_from(H)] += 2 * omega
    else:
        H += 2 * omega
    return total + _penalty(v, omega), grad, H


def penalized_nll(design: AdditiveDesign, theta: Theta, data: ExceedanceSample) -> float:
    """Penalized negative log-likelihood.

    ``inf`` when some observation leaves the support or the shape drops to -1
    or below at a training point.
    """
    A = design.design_matrix(data.x, data.z)
    return _value(theta.to_vector(), A, data.y, build_penalty_block(design), design.spec.reparam)


def penalized_nll_derivatives(design: AdditiveDesign, theta: Theta, data: ExceedanceSample):
    """Objective, gradient and Hessian at ``theta`` (``(inf, None, None)`` if infeasible)."""
    A = design.design_matrix(data.x, data.z)
    return _value_grad_hess(theta.to_vector(), A, data.y, build_penalty_block(design), design.spec.reparam)


def initialize_theta(design: AdditiveDesign, data: ExceedanceSample) -> Theta:
    """Shape intercept 0.1, log-scale intercept log(mean y), everything else 0."""
    spec = design.spec
    v = np.zeros(spec.n_params)
    v[spec.q] = math.log(float(np.mean(data.y)))
    v[0] = 0.1
    A = design.design_matrix(data.x, data.z)
    omega = build_penalty_block(design)
    while not math.isfinite(_value(v, A, data.y, omega, spec.reparam)) and abs(v[0]) > 1e-12:
        v[0] /= 2
    if not math.isfinite(_value(v, A, data.y, omega, spec.reparam)):
        v[0] = 0.0
    return Theta.from_vector(spec, v)


def _newton_direction(H, grad, ridge):
    # Jacobi scaling: penalty and data curvature differ by many orders of magnitude
    diag = np.abs(np.diag(H))
    d = np.sqrt(np.maximum(diag, 1e-12 * max(diag.max(), 1.0)))
    Hs = H / np.outer(d, d)
    gs = grad / d
    eye = np.eye(H.shape[0])
    r = ridge
    while r <= 1e8:
        try:
            cho = linalg.cho_factor(Hs + r * eye, check_finite=False)
            step = -linalg.cho_solve(cho, gs, check_finite=False) / d
            if np.all(np.isfinite(step)) and grad @ step < 0:
                return step
        except linalg.LinAlgError:
            pass
        r = max(r * 10, 1e-8)
    lam_min = float(np.linalg.eigvalsh(H)[0])
    raise SingularFitError(f"penalized Hessian cannot be regularized; smallest eigenvalue {lam_min:.3e}")


def _penalty_eigenbasis(omega, q):
    """Orthogonal ``U`` (q x q) diagonalizing both halves of ``omega``, and the two diagonals.

    Both halves are multiples of the same roughness form, so one rotation serves.
    """
    og, os_ = omega[:q, :q], omega[q:, q:]
    total = og + os_
    if not np.any(total):
        return np.eye(q), np.zeros(2 * q)
    _, U = np.linalg.eigh(total)
    diag = np.concatenate([np.einsum("ij,ik,kj->j", U, og, U), np.einsum("ij,ik,kj->j", U, os_, U)])
    scale = max(diag.max(), 1.0)
    diag[diag < 1e-13 * scale] = 0.0
    return U, diag


def fit(design: AdditiveDesign, data: ExceedanceSample, config: FitConfig = FitConfig(),
        theta0: Theta | None = None) -> FitResult:
    """Minimize the penalized negative log-likelihood.

    Non-convergence is reported through ``FitResult.converged``; only an
    unregularizable Hessian raises.
    """
    spec = design.spec
    A = design.design_matrix(data.x, data.z)
    y = data.y
    n = y.size
    # iterate in the eigenbasis of the penalty, where it is diagonal and free of cancellation
    q = spec.q
    U, omega = _penalty_eigenbasis(build_penalty_block(design), q)
    A_design, A = A, A @ U
    rot = linalg.block_diag(U, U)
    v = (theta0 or initialize_theta(design, data)).to_vector()
    v = np.concatenate([U.T @ v[:q], U.T @ v[q:]])
    if not math.isfinite(_value(v, A, y, omega, spec.reparam)):
        raise ValueError("initial parameter is infeasible for the data")

    f, grad, H = _value_grad_hess(v, A, y, omega, spec.reparam)
    history = [f]
    converged = False
    resolution_stop = None
    it = 0
    ridge = config.ridge
    for it in range(1, config.max_iter + 1):
        if np.max(np.abs(rot @ grad)) / n <= config.grad_tol:
            converged = True
            it -= 1
            break
        accepted = False
        for ridge_try in (ridge, max(ridge, 1e-6) * 1e3):
            step = _newton_direction(H, grad, ridge_try)
            slope = float(grad @ step)
            if ridge_try == ridge and -slope <= _ROUNDOFF * (1.0 + abs(f)):
                # stiff penalties can leave a gradient floor no representable step reduces;
                # stop once the predicted decrease is below the resolution of the objective
                resolution_stop = -slope
                break
            t = 1.0
            for _ in range(config.step_halving_max):
                f_new = _value(v + t * step, A, y, omega, spec.reparam)
                if f_new <= f + 1e-4 * t * slope + 8 * np.finfo(float).eps * abs(f):
                    accepted = True
                    break
                t /= 2
            if accepted:
                break
        if resolution_stop is not None:
            converged = True
            it -= 1
            break
        if not accepted:
            break
        v = v + t * step
        f, grad, H = _value_grad_hess(v, A, y, omega, spec.reparam)
        history.append(f)
    else:
        converged = np.max(np.abs(rot @ grad)) / n <= config.grad_tol

    grad_w, H_w = grad, H
    v = np.concatenate([U @ v[:q], U @ v[q:]])
    grad = rot @ grad_w
    H = rot @ H_w @ rot.T
    H = 0.5 * (H + H.T)
    gamma, eta = design.predictors(v, A_design)
    notes = list(data.diagnostics())
    if n < 10 * spec.q:
        notes.append(f"only n={n} exceedances for {spec.q} coefficients per predictor; "
                     f"at least {10 * spec.q} recommended")
    if gamma.min() < SHAPE_WARNING_LEVEL:
        notes.append(f"fitted shape reaches {gamma.min():.3f} < {SHAPE_WARNING_LEVEL} on training points; "
                     f"asymptotics need gamma > -m/(2m+1) = {-spec.m / (2 * spec.m + 1):.3f}")
    if resolution_stop is not None and np.max(np.abs(grad)) / n > config.grad_tol:
        notes.append(f"stopped at floating-point resolution (Newton decrement {resolution_stop:.1e}) "
                     f"with gradient {np.max(np.abs(grad)) / n:.1e} per observation above grad_tol")
    if not converged:
        notes.append(f"Newton iteration stopped after {it} iterations without reaching grad_tol")
    return FitResult(
        theta=Theta.from_vector(spec, v),
        converged=bool(converged),
        iterations=it,
        final_grad_norm=float(np.max(np.abs(grad)) / n),
        penalized_hessian=H,
        nll=f,
        gamma_hat=gamma,
        scale_hat=np.exp(eta),
        warnings=notes,
        history=history,
    )


def heldout_loglik(design: AdditiveDesign, theta: Theta, data: ExceedanceSample) -> float:
    A = design.design_matrix(data.x, data.z)
    gamma, eta = design.predictors(theta, A)
    with np.errstate(over="ignore", invalid="ignore"):
        nll = _terms(design.spec.reparam)(gamma, eta, data.y, hessian=False)[0]
    return -float(nll.sum())


def subsample(data: ExceedanceSample, idx) -> ExceedanceSample:
    return dataclasses.replace(data, y=data.y[idx], x=data.x[idx], z=data.z[idx], tau=data.tau[idx])


def select_smoothing(design: AdditiveDesign, data: ExceedanceSample, grid, config: FitConfig = FitConfig(),
                     seed: int = 0, holdout: float = 0.2):
    """Pick ``(lam, nu)`` from ``grid`` by held-out log-likelihood on a random split.

    Returns the best pair and a list of ``(lam, nu, heldout_loglik)`` rows.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    n_test = max(1, int(round(holdout * data.n)))
    test, train = subsample(data, perm[:n_test]), subsample(data, perm[n_test:])
    rows = []
    for lam, nu in grid:
        d = dataclasses.replace(design, spec=dataclasses.replace(design.spec, lam=float(lam), nu=float(nu)))
        res = fit(d, train, config)
        rows.append((float(lam), float(nu), heldout_loglik(d, res.theta, test) if res.converged else -math.inf))
    best = max(rows, key=lambda r: r[2])
    return (best[0], best[1]), rows
