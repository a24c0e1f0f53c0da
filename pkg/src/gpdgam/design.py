"""Additive model layout.

The shape and the log-scale share one design row ``A(x, z) = (x, B_1(z_1), ..., B_d(z_d))``
of length ``q = p + d (K + xi)``; the coefficient vector is packed as
``theta = (beta, b, u, c)`` so that ``gamma = A @ (beta, b)`` and
``log scale = A @ (u, c)``.  The scale is sigma for the plain family and
varsigma = sigma (1 + gamma) for the orthogonal one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .splines import (
    KnotGrid,
    NormalizedBasis,
    SplineDomainError,
    build_normalized_basis,
    eval_normalized_basis,
    penalty_quadratic_form,
)

MODEL_FORMAT_VERSION = 1
_EXP_LIMIT = 700.0


class ScaleOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    p: int
    d: int
    grid: KnotGrid
    m: int = 2
    lam: float = 1.0
    nu: float = 1.0
    reparam: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1 (the intercept)")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.lam < 0 or self.nu < 0:
            raise ValueError("smoothing parameters must be nonnegative")
        if not 1 <= self.m < self.grid.xi:
            raise ValueError(f"penalty order must satisfy 1 <= m < xi={self.grid.xi}, got m={self.m}")

    @property
    def q(self) -> int:
        """Length of the design row (one predictor)."""
        return self.p + self.d * self.grid.n_basis

    @property
    def n_params(self) -> int:
        return 2 * self.q

    def to_dict(self) -> dict:
        return {
            "p": self.p, "d": self.d, "K": self.grid.K, "xi": self.grid.xi,
            "m": self.m, "lambda": self.lam, "nu": self.nu, "reparam": self.reparam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(int(d["p"]), int(d["d"]), KnotGrid(int(d["K"]), int(d["xi"])), int(d["m"]),
                   float(d["lambda"]), float(d["nu"]), bool(d["reparam"]))


@dataclass(frozen=True)
class Theta:
    beta: np.ndarray
    b: np.ndarray
    u: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "Theta":
        return cls.from_vector(spec, np.zeros(spec.n_params))

    @classmethod
    def from_vector(cls, spec: ModelSpec, v) -> "Theta":
        v = np.asarray(v, float)
        if v.shape != (spec.n_params,):
            raise ValueError(f"theta must have length {spec.n_params}, got {v.shape}")
        p, q = spec.p, spec.q
        return cls(v[:p].copy(), v[p:q].copy(), v[q:q + p].copy(), v[q + p:].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.b, self.u, self.c])

    @property
    def theta_gamma(self) -> np.ndarray:
        return np.concatenate([self.beta, self.b])

    @property
    def theta_scale(self) -> np.ndarray:
        return np.concatenate([self.u, self.c])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("beta", "b", "u", "c")}

    @classmethod
    def from_dict(cls, d: dict) -> "Theta":
        return cls(*(np.asarray(d[k], float) for k in ("beta", "b", "u", "c")))


@dataclass(frozen=True)
class AdditiveDesign:
    """A model specification together with its fitted bases and covariate transforms.

    ``x_mean`` (length p, zero for the intercept) is subtracted from incoming
    ``x``.  ``z_range`` (d x 2), when set, min-max rescales incoming ``z``.
    """

    spec: ModelSpec
    bases: tuple[NormalizedBasis, ...]
    x_mean: np.ndarray = field(default=None)
    z_range: np.ndarray | None = None

    def __post_init__(self):
        if len(self.bases) != self.spec.d:
            raise ValueError("need one basis per smooth covariate")
        if self.x_mean is None:
            object.__setattr__(self, "x_mean", np.zeros(self.spec.p))

    def transform_z(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, float))
        if self.z_range is not None:
            lo, hi = self.z_range[:, 0], self.z_range[:, 1]
            z = (z - lo) / (hi - lo)
        return z

    def design_matrix(self, x, z) -> np.ndarray:
        """Stack design rows for many points; ``x`` includes the intercept column."""
        x = np.atleast_2d(np.asarray(x, float))
        z = self.transform_z(z)
        if x.shape[1] != self.spec.p or z.shape[1] != self.spec.d:
            raise ValueError(f"expected x with {self.spec.p} and z with {self.spec.d} columns, "
                             f"got {x.shape[1]} and {z.shape[1]}")
        if x.shape[0] != z.shape[0]:
            raise ValueError("x and z must have the same number of rows")
        blocks = [x - self.x_mean]
        for j, basis in enumerate(self.bases):
            try:
                blocks.append(eval_normalized_basis(basis, z[:, j]))
            except SplineDomainError as err:
                raise SplineDomainError(f"smooth covariate z_{j + 1}: {err}") from None
        return np.hstack(blocks)

    def predictors(self, theta: Theta | np.ndarray, A: np.ndarray):
        """Linear predictors ``(gamma, log scale)`` for design matrix ``A``."""
        v = theta.to_vector() if isinstance(theta, Theta) else np.asarray(theta, float)
        q = self.spec.q
        return A @ v[:q], A @ v[q:]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "bases": [b.to_dict() for b in self.bases],
            "x_mean": self.x_mean.tolist(),
            "z_range": None if self.z_range is None else self.z_range.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdditiveDesign":
        zr = d.get("z_range")
        return cls(
            ModelSpec.from_dict(d["spec"]),
            tuple(NormalizedBasis.from_dict(b) for b in d["bases"]),
            np.asarray(d["x_mean"], float),
            None if zr is None else np.asarray(zr, float),
        )


def build_design(spec: ModelSpec, x, z, center_x: bool = True, rescale_z: bool = False) -> AdditiveDesign:
    """Build normalized bases (and optional transforms) from training covariates."""
    x = np.atleast_2d(np.asarray(x, float))
    z = np.atleast_2d(np.asarray(z, float))
    x_mean = np.zeros(spec.p)
    if center_x and spec.p > 1:
        x_mean[1:] = x[:, 1:].mean(axis=0)
    z_range = None
    if rescale_z:
        lo, hi = z.min(axis=0), z.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        z_range = np.column_stack([lo, hi])
        z = (z - lo) / (hi - lo)
    bases = []
    for j in range(spec.d):
        try:
            bases.append(build_normalized_basis(spec.grid, z[:, j]))
        except SplineDomainError as err:
            raise SplineDomainError(f"smooth covariate z_{j + 1}: {err}") from None
    return AdditiveDesign(spec, tuple(bases), x_mean, z_range)


def build_design_row(design: AdditiveDesign, x, z) -> np.ndarray:
    """``A(x, z) = (x, B_1(z_1), ..., B_d(z_d))`` for a single point."""
    return design.design_matrix(np.atleast_2d(x), np.atleast_2d(z))[0]


def eval_model(design: AdditiveDesign, theta: Theta, x, z):
    """Shape and scale at one point; the scale is sigma, or varsigma if ``spec.reparam``."""
    a = build_design_row(design, x, z)
    gamma, eta = design.predictors(theta, a[None, :])
    eta = float(eta[0])
    if eta > _EXP_LIMIT:
        raise ScaleOverflowError(f"log-scale linear predictor {eta} overflows exp")
    return float(gamma[0]), float(np.exp(eta))


def build_penalty_block(design: AdditiveDesign) -> np.ndarray:
    """Block-diagonal ``Omega`` with ``theta^T Omega theta = lam sum_j int g_j^(m)^2 + nu sum_j int s_j^(m)^2``."""
    spec = design.spec
    nb = spec.grid.n_basis
    omega = np.zeros((spec.n_params, spec.n_params))
    for j, basis in enumerate(design.bases):
        P = penalty_quadratic_form(basis, spec.m)
        for offset, weight in ((0, spec.lam), (spec.q, spec.nu)):
            i0 = offset + spec.p + j * nb
            omega[i0:i0 + nb, i0:i0 + nb] = weight * P
    return omega
