"""Raw and normalized B-spline bases on [0, 1] and their roughness penalties.

Raw bases are the clamped, equidistant B-splines psi_0 .. psi_{K+xi}.  The
normalized bases recombine adjacent raw bases so that every basis function has
empirical mean zero and unit empirical second moment over the sample of the
covariate used to build it:

    B_k = (psi_k - (phi_k / phi_{k-1}) psi_{k-1}) / ||psibar_k||,   k = 1 .. K+xi

so an additive component B(z)^T b is automatically centred.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np


class SplineDomainError(ValueError):
    """Evaluation point outside [0, 1]."""


class DegenerateSampleError(ValueError):
    """Covariate sample too thin to support the requested knots."""


class PenaltyOrderError(ValueError):
    """Derivative order incompatible with the spline degree."""


@dataclass(frozen=True)
class KnotGrid:
    """Clamped equidistant knot sequence with ``K`` interior knots and degree ``xi``."""

    K: int
    xi: int

    def __post_init__(self):
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        if self.xi < 0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")

    @cached_property
    def knots(self) -> np.ndarray:
        interior = np.arange(1, self.K + 1) / (self.K + 1)
        return np.concatenate([np.zeros(self.xi + 1), interior, np.ones(self.xi + 1)])

    @property
    def n_raw(self) -> int:
        return self.K + self.xi + 1

    @property
    def n_basis(self) -> int:
        """Number of normalized basis functions."""
        return self.K + self.xi

    def reduced(self, m: int) -> "KnotGrid":
        """Grid of the degree ``xi - m`` bases spanning the m-th derivatives."""
        if m > self.xi:
            raise PenaltyOrderError(f"derivative order m={m} exceeds degree xi={self.xi}")
        return KnotGrid(self.K, self.xi - m)


def _check_unit_interval(z: np.ndarray) -> None:
    if z.size and (np.any(~np.isfinite(z)) or z.min() < 0.0 or z.max() > 1.0):
        bad = z[(~np.isfinite(z)) | (z < 0.0) | (z > 1.0)]
        raise SplineDomainError(f"z must lie in [0, 1]; got e.g. {float(bad.flat[0])!r}")


def eval_raw_basis(grid: KnotGrid, z) -> np.ndarray:
    """Evaluate all raw B-splines by the Cox-de Boor triangle.

    Parameters
    ----------
    grid : KnotGrid
    z : float or array_like
        Points in [0, 1].  ``z == 1`` is evaluated as the left limit so the
        partition of unity holds on the closed interval.

    Returns
    -------
    ndarray
        Shape ``(K + xi + 1,)`` for scalar ``z``, otherwise ``(len(z), K + xi + 1)``.
    """
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=float))
    _check_unit_interval(z)
    t = grid.knots
    p = grid.xi
    # knot span index into t: t[span] <= z < t[span + 1], with spans p .. p + K
    span = np.searchsorted(t, z, side="right") - 1
    span = np.clip(span, p, p + grid.K)

    n = z.size
    N = np.zeros((n, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = z - t[span + 1 - j]
        right[:, j] = t[span + j] - z
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved

    out = np.zeros((n, grid.n_raw))
    cols = (span - p)[:, None] + np.arange(p + 1)[None, :]
    np.put_along_axis(out, cols, N, axis=1)
    return out[0] if scalar else out


def derivative_matrix(grid: KnotGrid, m: int) -> np.ndarray:
    """Map raw coefficients to coefficients of the m-th derivative.

    Returns ``E`` of shape ``(K + xi + 1 - m, K + xi + 1)`` such that
    ``d^m/dz^m psi(z)^T a = psi_reduced(z)^T E a`` where ``psi_reduced`` are the
    degree ``xi - m`` bases of ``grid.reduced(m)``.  Away from the boundary the
    rows of ``E`` equal ``(K + 1)^m`` times the signed m-th difference stencil.
    """
    if m < 0:
        raise PenaltyOrderError("m must be >= 0")
    if m > grid.xi:
        raise PenaltyOrderError(f"derivative order m={m} exceeds degree xi={grid.xi}")
    t = grid.knots
    E = np.eye(grid.n_raw)
    for q in range(m):
        deg = grid.xi - q
        size = grid.K + deg + 1
        # knots of the degree-`deg` grid are t[q : len(t) - q]
        tq = t[q : len(t) - q]
        i = np.arange(1, size)
        w = deg / (tq[i + deg] - tq[i])
        step = np.zeros((size - 1, size))
        step[i - 1, i] = w
        step[i - 1, i - 1] = -w
        E = step @ E
    return E


def build_difference_matrix(size: int, m: int) -> np.ndarray:
    """m-th order difference matrix of shape ``(size - m, size)``.

    First-order rows are ``(1, -1)``; higher orders compose first differences
    of shrinking size, so rows of the second-order matrix read ``(1, -2, 1)``.
    """
    if m < 1:
        raise ValueError(f"difference order must be >= 1, got {m}")
    if size <= m:
        raise ValueError(f"size={size} must exceed order m={m}")
    D = np.eye(size)
    for q in range(m):
        s = size - q
        D1 = np.eye(s - 1, s) - np.eye(s - 1, s, k=1)
        D = D1 @ D
    return D


def build_gram_matrix(grid: KnotGrid, m: int) -> np.ndarray:
    """Gram matrix ``R[i, k] = int_0^1 psi_i(z) psi_k(z) dz`` of the degree ``xi - m`` bases.

    Integrated exactly with Gauss-Legendre rules on every knot interval.
    """
    if m < 0:
        raise PenaltyOrderError("m must be >= 0")
    low = grid.reduced(m)
    nodes, weights = np.polynomial.legendre.leggauss(low.xi + 1)
    edges = np.arange(grid.K + 2) / (grid.K + 1)
    a, b = edges[:-1], edges[1:]
    z = ((b - a)[:, None] * (nodes[None, :] + 1.0) / 2.0 + a[:, None]).ravel()
    w = ((b - a)[:, None] / 2.0 * weights[None, :]).ravel()
    P = eval_raw_basis(low, z)
    R = P.T @ (w[:, None] * P)
    return 0.5 * (R + R.T)


@dataclass(frozen=True)
class NormalizedBasis:
    """Centred, unit-RMS recombination of raw B-splines for one covariate.

    Attributes
    ----------
    grid : KnotGrid
    phi : ndarray, shape (K + xi + 1,)
        Empirical means of the raw bases over the construction sample.
    norms : ndarray, shape (K + xi,)
        Empirical RMS of the centred combinations ``psibar_k``.
    """

    grid: KnotGrid
    phi: np.ndarray
    norms: np.ndarray

    @cached_property
    def Psi(self) -> np.ndarray:
        """Band matrix with ``B(z) = Psi^T psi(z)``, shape ``(K + xi + 1, K + xi)``."""
        n = self.grid.n_basis
        Psi = np.zeros((n + 1, n))
        k = np.arange(1, n + 1)
        ratio = self.phi[k] / self.phi[k - 1]
        Psi[k, k - 1] = 1.0 / self.norms
        Psi[k - 1, k - 1] = -ratio / self.norms
        return Psi

    def __call__(self, z) -> np.ndarray:
        return eval_normalized_basis(self, z)

    def to_dict(self) -> dict:
        return {
            "K": self.grid.K,
            "xi": self.grid.xi,
            "phi": self.phi.tolist(),
            "norms": self.norms.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizedBasis":
        return cls(
            KnotGrid(int(d["K"]), int(d["xi"])),
            np.asarray(d["phi"], dtype=float),
            np.asarray(d["norms"], dtype=float),
        )


def build_normalized_basis(grid: KnotGrid, zsample) -> NormalizedBasis:
    """Estimate ``phi`` and the norms from a covariate sample.

    Raises
    ------
    DegenerateSampleError
        If some raw basis has no mass on the sample or a centred combination
        vanishes identically (too few distinct z values for ``K``).
    """
    zsample = np.asarray(zsample, dtype=float).ravel()
    if zsample.size == 0:
        raise DegenerateSampleError("empty covariate sample")
    raw = eval_raw_basis(grid, zsample)
    phi = raw.mean(axis=0)
    if np.any(phi <= 0.0):
        k = int(np.flatnonzero(phi <= 0.0)[0])
        raise DegenerateSampleError(
            f"raw basis {k} has zero empirical mass; reduce K={grid.K} or supply more distinct z"
        )
    ratio = phi[1:] / phi[:-1]
    centred = raw[:, 1:] - ratio[None, :] * raw[:, :-1]
    norms = np.sqrt(np.mean(centred**2, axis=0))
    if np.any(norms <= 1e-14):
        k = int(np.flatnonzero(norms <= 1e-14)[0]) + 1
        raise DegenerateSampleError(f"normalized basis {k} vanishes on the sample (K={grid.K})")
    return NormalizedBasis(grid, phi, norms)


def eval_normalized_basis(basis: NormalizedBasis, z) -> np.ndarray:
    """Evaluate ``B_1(z) .. B_{K+xi}(z)``; same shape convention as :func:`eval_raw_basis`."""
    return eval_raw_basis(basis.grid, z) @ basis.Psi


def penalty_quadratic_form(basis: NormalizedBasis, m: int) -> np.ndarray:
    """Matrix ``P`` with ``v^T P v = int_0^1 {(B(z)^T v)^{(m)}}^2 dz``.

    ``P = Psi^T E_m^T R_m E_m Psi`` where ``E_m`` is the exact derivative map of
    :func:`derivative_matrix` (interior rows ``(K+1)^m`` times the difference
    stencil) and ``R_m`` the Gram matrix of degree ``xi - m`` bases.  The
    Hessian of the integral in ``v`` is ``2 P``.
    """
    grid = basis.grid
    if not 1 <= m < grid.xi:
        raise PenaltyOrderError(f"penalty order must satisfy 1 <= m < xi={grid.xi}, got m={m}")
    E = derivative_matrix(grid, m) @ basis.Psi
    P = E.T @ build_gram_matrix(grid, m) @ E
    return 0.5 * (P + P.T)


def nominal_penalty_form(basis: NormalizedBasis, m: int) -> np.ndarray:
    """``K^{2m} (m!)^2 Psi^T D_m^T R_m D_m Psi`` with plain difference matrices.

    Kept for comparison with the textbook P-spline scaling; it agrees with
    :func:`penalty_quadratic_form` only up to the interior factor
    ``((K+1) / (K m!^{1/m}))^{2m}`` and boundary corrections.
    """
    grid = basis.grid
    if not 1 <= m < grid.xi:
        raise PenaltyOrderError(f"penalty order must satisfy 1 <= m < xi={grid.xi}, got m={m}")
    D = build_difference_matrix(grid.n_raw, m) @ basis.Psi
    scale = float(grid.K) ** (2 * m) * factorial(m) ** 2
    return scale * (D.T @ build_gram_matrix(grid, m) @ D)


def eval_spline_mth_derivative(basis: NormalizedBasis, v, m: int, z) -> np.ndarray | float:
    """m-th derivative of ``B(z)^T v`` at ``z``."""
    grid = basis.grid
    if not 0 <= m < grid.xi:
        raise PenaltyOrderError(f"derivative order must satisfy 0 <= m < xi={grid.xi}, got m={m}")
    coef = derivative_matrix(grid, m) @ (basis.Psi @ np.asarray(v, dtype=float))
    return eval_raw_basis(grid.reduced(m), z) @ coef
