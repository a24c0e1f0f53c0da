"""Monte Carlo laboratory: scenario generators with known truth and experiments
that check convergence rates, local normality and orthogonality empirically.

Replicate ``r`` of grid point ``i`` draws from ``numpy.random.default_rng``
seeded with ``replicate_seed(seed, i, r)``, so serial and parallel runs give
bit-identical results.  Reductions always run in replicate order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .design import AdditiveDesign
from .fitter import FitConfig, FitResult, default_knots, fit, make_design
from .gpd import gpd_quantile, nll_terms, nll_terms_ortho
from .inference import predictor_covariance
from .pot import ExceedanceSample, RawTable, ThresholdSpec, apply_threshold

_MASK64 = (1 << 64) - 1
GRID_SIZE = 200
_GRID_SEED = 20_240_601
MAX_DROP_FRACTION = 0.10


class ScenarioError(ValueError):
    pass


class ExperimentInvalidError(RuntimeError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def replicate_seed(seed: int, *indices: int) -> int:
    """Fold indices into the master seed one splitmix64 round at a time."""
    s = splitmix64(seed & _MASK64)
    for i in indices:
        s = splitmix64(s ^ (i & _MASK64))
    return s


# --- truths -------------------------------------------------------------------

SMOOTH_CATALOG = {
    "zero": lambda z, a: np.zeros_like(z),
    "sin": lambda z, a: a * np.sin(2 * np.pi * z),
    "cos": lambda z, a: a * np.cos(2 * np.pi * z),
    "linear": lambda z, a: a * (z - 0.5),
}


@dataclass(frozen=True)
class AdditiveTruth:
    """``intercept + sum_k linear[k] x_k + sum_j smooth_j(z_j)`` with mean-zero smooths.

    ``smooths`` holds ``(name, amplitude)`` pairs from :data:`SMOOTH_CATALOG`.
    """

    intercept: float
    linear: tuple[float, ...] = ()
    smooths: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        for name, _ in self.smooths:
            if name not in SMOOTH_CATALOG:
                raise ScenarioError(f"unknown smooth {name!r}; catalog has {sorted(SMOOTH_CATALOG)}")

    def __call__(self, x, z) -> np.ndarray:
        """Evaluate at covariates ``x`` (without intercept) and ``z``."""
        x = np.atleast_2d(x)
        z = np.atleast_2d(z)
        out = np.full(z.shape[0], float(self.intercept))
        for k, beta in enumerate(self.linear):
            out = out + beta * x[:, k]
        for j, (name, a) in enumerate(self.smooths):
            out = out + SMOOTH_CATALOG[name](z[:, j], a)
        return out

    @property
    def coefficients(self) -> np.ndarray:
        return np.array((self.intercept, *self.linear), dtype=float)

    @property
    def is_zero(self) -> bool:
        return self.intercept == 0 and not any(self.linear) and all(
            name == "zero" or a == 0 for name, a in self.smooths)

    def range(self) -> tuple[float, float]:
        """Exact range over ``x in [-1, 1]^{p-1}``, ``z in [0, 1]^d`` (separable terms)."""
        lo = hi = float(self.intercept)
        for beta in self.linear:
            lo -= abs(beta)
            hi += abs(beta)
        zz = np.linspace(0, 1, 2001)
        for name, a in self.smooths:
            v = SMOOTH_CATALOG[name](zz, a)
            lo += v.min()
            hi += v.max()
        return lo, hi

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "linear": list(self.linear),
                "smooths": [list(s) for s in self.smooths]}

    @classmethod
    def from_dict(cls, d: dict) -> "AdditiveTruth":
        return cls(float(d.get("intercept", 0.0)), tuple(float(v) for v in d.get("linear", ())),
                   tuple((str(n), float(a)) for n, a in d.get("smooths", ())))


FAMILIES = ("exact-gpd", "burr", "reversed-burr", "gaussian")
_FAMILY_REGIMES = {"burr": ("S1",), "reversed-burr": ("S2",), "gaussian": ("S3",)}


@dataclass(frozen=True)
class Scenario:
    """Data-generating process with known shape (and, for exact-gpd, scale).

    ``exceedance_prob`` applies to exact-gpd with a constant threshold: each
    observation exceeds with this probability (below-threshold values are
    uniform on ``(0, w)``), and exceedances are exactly GPD.  ``burr_k`` sets
    the second-order parameter ``rho = -1/burr_k`` of the (reversed) Burr
    families, whose upper-tail index equals the shape truth.
    """

    family: str
    gamma_fn: AdditiveTruth
    sigma_fn: AdditiveTruth = AdditiveTruth(0.0)
    threshold: ThresholdSpec = ThresholdSpec("constant", 0.0)
    seed: int = 0
    sign_regime: str = "S1"
    burr_k: float = 1.0
    exceedance_prob: float = 1.0
    endpoint: float = 10.0

    def __post_init__(self):
        self.validate()

    @property
    def p(self) -> int:
        return 1 + max(len(self.gamma_fn.linear), len(self.sigma_fn.linear))

    @property
    def d(self) -> int:
        return max(len(self.gamma_fn.smooths), len(self.sigma_fn.smooths), 1)

    @property
    def rho(self) -> float:
        return 0.0 if self.family in ("exact-gpd",) else -1.0 / self.burr_k

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ScenarioError(f"unknown family {self.family!r}")
        if self.sign_regime not in ("S1", "S2", "S3"):
            raise ScenarioError(f"unknown sign regime {self.sign_regime!r}")
        allowed = _FAMILY_REGIMES.get(self.family)
        if allowed and self.sign_regime not in allowed:
            raise ScenarioError(f"family {self.family} requires regime {allowed[0]}, got {self.sign_regime}")
        lo, hi = self.gamma_fn.range()
        if self.sign_regime == "S1" and not lo > 0:
            raise ScenarioError(f"(S1) needs min gamma > 0, truth reaches {lo:.3f}")
        if self.sign_regime == "S2" and not (-0.4 < lo and hi < 0):
            raise ScenarioError(f"(S2) needs -2/5 < gamma < 0, truth spans [{lo:.3f}, {hi:.3f}]")
        if self.sign_regime == "S3" and not self.gamma_fn.is_zero:
            raise ScenarioError("(S3) needs gamma identically zero")
        if not self.burr_k > 0:
            raise ScenarioError("burr_k must be positive")
        if not 0 < self.exceedance_prob <= 1:
            raise ScenarioError("exceedance_prob must lie in (0, 1]")
        if self.family == "exact-gpd":
            if self.threshold.kind != "constant":
                raise ScenarioError("exact-gpd scenarios use a constant threshold")
            if self.exceedance_prob < 1 and not float(self.threshold.value) > 0:
                raise ScenarioError("exceedance_prob < 1 needs a positive constant threshold")

    @property
    def exceedance_rate(self) -> float:
        """Expected fraction n/N of observations above the threshold."""
        if self.family == "exact-gpd":
            return self.exceedance_prob
        if self.threshold.kind == "quantile":
            return 1 - float(self.threshold.value)
        raise ScenarioError("cannot predict the exceedance rate for this threshold")

    def N_for(self, n: int) -> int:
        """Raw sample size giving about ``n`` exceedances."""
        return int(math.ceil(n / self.exceedance_rate - 1e-9))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_fn"] = self.gamma_fn.to_dict()
        d["sigma_fn"] = self.sigma_fn.to_dict()
        d["threshold"] = self.threshold.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["gamma_fn"] = AdditiveTruth.from_dict(d["gamma_fn"])
        if "sigma_fn" in d:
            d["sigma_fn"] = AdditiveTruth.from_dict(d["sigma_fn"])
        if "threshold" in d:
            t = d["threshold"]
            d["threshold"] = ThresholdSpec.parse(t) if isinstance(t, str) else ThresholdSpec(t["kind"], t["value"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(f"unknown scenario fields {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Truth:
    """Shape and log-scale truths; ``logsigma`` is ``None`` when not available in closed form."""

    gamma: AdditiveTruth
    logsigma: AdditiveTruth | None

    def log_varsigma(self, x, z):
        if self.logsigma is None:
            return None
        return self.logsigma(x, z) + np.log1p(self.gamma(x, z))


def generate(scenario: Scenario, N: int, rng: np.random.Generator | int | None = None):
    """Draw ``N`` raw observations; returns ``(RawTable, Truth)``.

    ``x`` is uniform on ``(-1, 1)^{p-1}``, ``z`` uniform on ``(0, 1)^d``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(scenario.seed if rng is None else int(rng))
    x = rng.uniform(-1.0, 1.0, size=(N, scenario.p - 1))
    z = rng.uniform(0.0, 1.0, size=(N, scenario.d))
    g = scenario.gamma_fn(x, z)
    u = rng.uniform(size=N)
    fam = scenario.family
    if fam == "exact-gpd":
        w = float(scenario.threshold.value)
        y = w + gpd_quantile(g, np.exp(scenario.sigma_fn(x, z)), u)
        if scenario.exceedance_prob < 1:
            below = rng.uniform(size=N) >= scenario.exceedance_prob
            y = np.where(below, w * rng.uniform(size=N), y)
        truth = Truth(scenario.gamma_fn, scenario.sigma_fn)
    elif fam == "burr":
        k = scenario.burr_k
        y = np.expm1(-np.log1p(-u) / k) ** (g * k)
        truth = Truth(scenario.gamma_fn, None)
    elif fam == "reversed-burr":
        k = scenario.burr_k
        w_heavy = np.expm1(-np.log1p(-u) / k) ** (-g * k)
        y = scenario.endpoint - 1.0 / w_heavy
        truth = Truth(scenario.gamma_fn, None)
    else:
        y = rng.standard_normal(N)
        truth = Truth(scenario.gamma_fn, None)
    return RawTable(y, x, z), truth


# --- single replicate ----------------------------------------------------------

@dataclass(frozen=True)
class FitSettings:
    m: int = 2
    xi: int = 3
    lam: float = 1e-2
    nu: float = 1e-2
    K: int | None = None
    max_iter: int = 200
    grad_tol: float = 1e-8

    @property
    def config(self) -> FitConfig:
        return FitConfig(max_iter=self.max_iter, grad_tol=self.grad_tol)


def fit_replicate(scenario: Scenario, n: int, seed: int, settings: FitSettings, reparam: bool = False):
    """Generate about ``n`` exceedances, threshold, fit.  Returns ``(design, data, FitResult, truth)``."""
    raw, truth = generate(scenario, scenario.N_for(n), np.random.default_rng(seed))
    data = apply_threshold(raw, scenario.threshold)
    K = settings.K if settings.K is not None else default_knots(n, settings.m)
    design, _ = make_design(data, K=K, xi=settings.xi, m=settings.m, lam=settings.lam,
                            nu=settings.nu, reparam=reparam)
    return design, data, fit(design, data, settings.config), truth


def evaluation_grid(p: int, d: int, size: int = GRID_SIZE):
    """Fixed covariate grid shared by all rate experiments (x with intercept, z)."""
    rng = np.random.default_rng(_GRID_SEED)
    x = np.column_stack([np.ones(size), rng.uniform(-1, 1, size=(size, p - 1))])
    z = rng.uniform(0, 1, size=(size, d))
    return x, z


def uncentred_coefficients(design: AdditiveDesign, coef: np.ndarray) -> np.ndarray:
    """Linear coefficients in the original x coordinates (undo centring)."""
    out = np.array(coef, dtype=float)
    out[0] -= float(design.x_mean[1:] @ coef[1:])
    return out


# --- rate experiment -----------------------------------------------------------

def _rate_task(args):
    scenario, n, seed, settings = args
    design, data, res, truth = fit_replicate(scenario, n, seed, settings)
    if not res.converged:
        return None
    xg, zg = evaluation_grid(scenario.p, scenario.d)
    A = design.design_matrix(xg, zg)
    g_hat, l_hat = design.predictors(res.theta, A)
    g_true = truth.gamma(xg[:, 1:], zg)
    row = {
        "n_exc": data.n,
        "rmse_gamma": float(np.sqrt(np.mean((g_hat - g_true) ** 2))),
        "rmse_beta": float(np.linalg.norm(
            uncentred_coefficients(design, res.theta.beta) - scenario.gamma_fn.coefficients)),
        "rmse_scale": math.nan,
    }
    if truth.logsigma is not None:
        row["rmse_scale"] = float(np.sqrt(np.mean((l_hat - truth.logsigma(xg[:, 1:], zg)) ** 2)))
    return row


def _run_tasks(fn, tasks, workers: int):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [fn(t) for t in tasks]


def _slope(n_grid, means, ses):
    """OLS slope of log(mean) on log(n) with its Monte Carlo standard error."""
    lx = np.log(np.asarray(n_grid, float))
    ly = np.log(np.asarray(means, float))
    w = (lx - lx.mean()) / np.sum((lx - lx.mean()) ** 2)
    slope = float(w @ ly)
    rel = np.asarray(ses, float) / np.asarray(means, float)  # delta method on log
    return slope, float(np.sqrt(np.sum(w**2 * rel**2)))


@dataclass
class RateReport:
    n_grid: list[int]
    K: list[int]
    reps: int
    used: list[int]
    dropped: list[int]
    mean_exceedances: list[float]
    rmse_gamma: list[float]
    rmse_gamma_se: list[float]
    rmse_scale: list[float]
    rmse_scale_se: list[float]
    rmse_beta: list[float]
    rmse_beta_se: list[float]
    slope: float
    slope_se: float
    slope_scale: float
    slope_scale_se: float
    slope_beta: float
    slope_beta_se: float
    expected_slope: float
    bands: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["n", "K", "used", "dropped", "mean_exceedances", "rmse_gamma", "rmse_gamma_se",
                "rmse_scale", "rmse_scale_se", "rmse_beta", "rmse_beta_se"]
        w.writerow(cols)
        for i, n in enumerate(self.n_grid):
            w.writerow([n, self.K[i], self.used[i], self.dropped[i]] + [
                repr(float(getattr(self, c)[i])) for c in cols[4:]])
        return buf.getvalue()

    def summary(self) -> dict:
        return {k: v for k, v in asdict(self).items()} | {"passed": self.passed}


DEFAULT_RATE_BANDS = {"slope": (-0.55, -0.25)}
DEFAULT_PARAMETRIC_BANDS = {"slope_beta": (-0.6, -0.4)}


def _mean_se(values):
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan


def run_rate_experiment(scenario: Scenario, n_grid, reps: int, m: int = 2,
                        settings: FitSettings | None = None, seed: int | None = None,
                        workers: int = 1, bands: dict | None = None) -> RateReport:
    """Monte Carlo RMSE of the fitted shape (and log-scale, and linear part) versus n.

    ``K = ceil(n^{1/(2m+1)})`` at every ``n`` unless ``settings.K`` is fixed.
    Unconverged fits are dropped; more than 10% drops at any ``n`` invalidates
    the experiment.
    """
    n_grid = [int(n) for n in n_grid]
    if reps < 2:
        raise ValueError("reps must be >= 2")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    settings = settings or FitSettings(m=m)
    if settings.m != m:
        settings = FitSettings(**{**asdict(settings), "m": m})
    seed = scenario.seed if seed is None else seed
    tasks = [(scenario, n, replicate_seed(seed, i, r), settings)
             for i, n in enumerate(n_grid) for r in range(reps)]
    results = _run_tasks(_rate_task, tasks, workers)

    per_n = [results[i * reps:(i + 1) * reps] for i in range(len(n_grid))]
    cols = {k: [] for k in ("rmse_gamma", "rmse_scale", "rmse_beta")}
    ses = {k: [] for k in cols}
    used, dropped, mean_exc = [], [], []
    for n, rows in zip(n_grid, per_n):
        ok = [r for r in rows if r is not None]
        used.append(len(ok))
        dropped.append(reps - len(ok))
        if reps - len(ok) > MAX_DROP_FRACTION * reps:
            raise ExperimentInvalidError(f"{reps - len(ok)} of {reps} fits failed to converge at n={n}")
        mean_exc.append(float(np.mean([r["n_exc"] for r in ok])))
        for k in cols:
            mu, se = _mean_se([r[k] for r in ok])
            cols[k].append(mu)
            ses[k].append(se)

    slopes = {}
    for k in cols:
        if all(np.isfinite(cols[k])):
            slopes[k] = _slope(n_grid, cols[k], ses[k])
        else:
            slopes[k] = (math.nan, math.nan)

    if bands is None:
        bands = dict(DEFAULT_RATE_BANDS) if any(
            a != 0 and name != "zero" for name, a in scenario.gamma_fn.smooths) else dict(DEFAULT_PARAMETRIC_BANDS)
    report = RateReport(
        n_grid=n_grid, K=[settings.K or default_knots(n, m) for n in n_grid], reps=reps,
        used=used, dropped=dropped, mean_exceedances=mean_exc,
        rmse_gamma=cols["rmse_gamma"], rmse_gamma_se=ses["rmse_gamma"],
        rmse_scale=cols["rmse_scale"], rmse_scale_se=ses["rmse_scale"],
        rmse_beta=cols["rmse_beta"], rmse_beta_se=ses["rmse_beta"],
        slope=slopes["rmse_gamma"][0], slope_se=slopes["rmse_gamma"][1],
        slope_scale=slopes["rmse_scale"][0], slope_scale_se=slopes["rmse_scale"][1],
        slope_beta=slopes["rmse_beta"][0], slope_beta_se=slopes["rmse_beta"][1],
        expected_slope=-m / (2 * m + 1),
        bands={k: list(v) for k, v in bands.items()},
    )
    report.checks = {k: bool(lo <= getattr(report, k) <= hi) for k, (lo, hi) in bands.items()}
    return report


# --- normality experiment ------------------------------------------------------

def _normality_task(args):
    scenario, n, seed, settings, x0, z0 = args
    x0 = np.atleast_2d(x0)
    z0 = np.atleast_2d(z0)
    out = {}
    for reparam in (False, True):
        design, data, res, truth = fit_replicate(scenario, n, seed, settings, reparam=reparam)
        if not res.converged:
            return None
        a = design.design_matrix(x0, z0)
        g_hat, l_hat = design.predictors(res.theta, a)
        cov = predictor_covariance(res, a)[0]
        g0 = float(truth.gamma(x0[:, 1:], z0)[0])
        tag = "ortho" if reparam else "plain"
        out[f"{tag}_gamma"] = float(g_hat[0])
        out[f"{tag}_logscale"] = float(l_hat[0])
        out[f"{tag}_se_gamma"] = float(np.sqrt(cov[0, 0]))
        out[f"{tag}_z"] = (float(g_hat[0]) - g0) / float(np.sqrt(cov[0, 0]))
        out[f"{tag}_beta1"] = float(res.theta.beta[0])
        out[f"{tag}_u1"] = float(res.theta.u[0])
        ls0 = truth.log_varsigma(x0[:, 1:], z0) if reparam else (
            None if truth.logsigma is None else truth.logsigma(x0[:, 1:], z0))
        if ls0 is not None:
            out[f"{tag}_zscale"] = (float(l_hat[0]) - float(ls0[0])) / float(np.sqrt(cov[1, 1]))
    return out


@dataclass
class NormalityReport:
    n: int
    reps: int
    used: int
    dropped: int
    point_x: list[float]
    point_z: list[float]
    mean: float
    variance: float
    skewness: float
    coverage90: float
    coverage95: float
    scale_variance: float
    scale_coverage95: float
    ortho_variance: float
    ortho_coverage95: float
    corr_plain: float
    corr_ortho: float
    corr_ortho_intercepts: float
    bands: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["statistic", "value"])
        for k, v in asdict(self).items():
            if isinstance(v, float):
                w.writerow([k, repr(v)])
        return buf.getvalue()

    def summary(self) -> dict:
        return asdict(self) | {"passed": self.passed}


DEFAULT_NORMALITY_BANDS = {
    "variance": (0.8, 1.25),
    "coverage95": (0.91, 0.99),
    "abs_corr_ortho": (0.0, 0.1),
}


def run_normality_experiment(scenario: Scenario, n: int, reps: int, x0, z0,
                             settings: FitSettings | None = None, seed: int | None = None,
                             workers: int = 1, bands: dict | None = None) -> NormalityReport:
    """Standardized shape errors at one covariate point over many replicates.

    Each replicate fits both the plain and the orthogonal family to the same
    data.  Reports moments and coverage of the standardized shape error and
    the across-replicate correlation between shape and log-scale estimates.
    """
    if scenario.family != "exact-gpd":
        raise ScenarioError("normality experiments need the bias-free exact-gpd family")
    if reps < 3:
        raise ValueError("reps must be >= 3")
    settings = settings or FitSettings()
    seed = scenario.seed if seed is None else seed
    x0 = np.asarray(x0, float).ravel()
    z0 = np.asarray(z0, float).ravel()
    tasks = [(scenario, int(n), replicate_seed(seed, 0, r), settings, x0, z0) for r in range(reps)]
    rows = [r for r in _run_tasks(_normality_task, tasks, workers) if r is not None]
    if reps - len(rows) > MAX_DROP_FRACTION * reps:
        raise ExperimentInvalidError(f"{reps - len(rows)} of {reps} fits failed to converge")

    col = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    zq90, zq95 = stats.norm.ppf(0.95), stats.norm.ppf(0.975)
    zs = col["plain_z"]
    report = NormalityReport(
        n=int(n), reps=reps, used=len(rows), dropped=reps - len(rows),
        point_x=x0.tolist(), point_z=z0.tolist(),
        mean=float(zs.mean()), variance=float(zs.var(ddof=1)), skewness=float(stats.skew(zs)),
        coverage90=float(np.mean(np.abs(zs) <= zq90)), coverage95=float(np.mean(np.abs(zs) <= zq95)),
        scale_variance=float(col["plain_zscale"].var(ddof=1)) if "plain_zscale" in col else math.nan,
        scale_coverage95=float(np.mean(np.abs(col["plain_zscale"]) <= zq95)) if "plain_zscale" in col else math.nan,
        ortho_variance=float(col["ortho_z"].var(ddof=1)),
        ortho_coverage95=float(np.mean(np.abs(col["ortho_z"]) <= zq95)),
        corr_plain=float(np.corrcoef(col["plain_gamma"], col["plain_logscale"])[0, 1]),
        corr_ortho=float(np.corrcoef(col["ortho_gamma"], col["ortho_logscale"])[0, 1]),
        corr_ortho_intercepts=float(np.corrcoef(col["ortho_beta1"], col["ortho_u1"])[0, 1]),
    )
    bands = dict(DEFAULT_NORMALITY_BANDS if bands is None else bands)
    values = asdict(report) | {"abs_corr_ortho": abs(report.corr_ortho)}
    report.bands = {k: list(v) for k, v in bands.items()}
    report.checks = {k: bool(lo <= values[k] <= hi) for k, (lo, hi) in bands.items()}
    return report


# --- Fisher oracle -------------------------------------------------------------

def oracle_fisher(gamma: float, draws: int = 10**6, seed: int = 0, ortho: bool = False,
                  stratified: bool = True):
    """Monte Carlo mean of score outer products under exact GPD sampling.

    The stratified estimator draws one uniform ``s`` per equal-probability
    stratum and sets ``1 - u = s^2`` with weight ``2 s``; this flattens the
    endpoint singularity of the scores for negative shapes without bias.  Its
    stderr collapses adjacent strata in pairs.  With ``stratified=False`` the
    draws are plain iid uniforms.  Returns ``(mean, stderr)`` 2x2 arrays.
    """
    if not gamma > -0.5:
        raise ValueError("score second moments need gamma > -1/2")
    rng = np.random.default_rng(seed)
    if stratified:
        s = (np.arange(draws) + rng.uniform(size=draws)) / draws
        u, w = 1.0 - s * s, 2.0 * s
    else:
        u, w = rng.uniform(size=draws), np.ones(draws)
    if ortho:
        y = gpd_quantile(gamma, 1.0 / (1.0 + gamma), u)
        _, sg, ss = nll_terms_ortho(gamma, 0.0, y, hessian=False)
    else:
        y = gpd_quantile(gamma, 1.0, u)
        _, sg, ss = nll_terms(gamma, 0.0, y, hessian=False)
    prods = w * np.stack([sg * sg, sg * ss, ss * ss])
    mean = prods.mean(axis=1)
    if stratified:
        half = draws // 2
        diff = prods[:, 0:2 * half:2] - prods[:, 1:2 * half:2]
        se = np.sqrt(np.sum(diff**2, axis=1)) / draws
    else:
        se = prods.std(axis=1, ddof=1) / math.sqrt(draws)

    def sym(v):
        return np.array([[v[0], v[1]], [v[1], v[2]]])

    return sym(mean), sym(se)


def to_json(obj) -> str:
    """Deterministic JSON (sorted keys, repr floats)."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")
