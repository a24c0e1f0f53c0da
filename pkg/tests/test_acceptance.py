"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even without ``-s``.  Monte Carlo criteria read the shipped configs in
``scripts/configs`` so the suite and the runner scripts share one setup.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, interpolate

from gpdgam.cli import main as cli_main
from gpdgam.fitter import fit, make_design, penalized_nll, penalized_nll_derivatives
from gpdgam.design import Theta
from gpdgam.gpd import fisher_info, fisher_info_ortho, gpd_quantile
from gpdgam.pot import RawTable, ThresholdSpec, apply_threshold
from gpdgam.simlab import oracle_fisher
from gpdgam.splines import (
    KnotGrid,
    build_normalized_basis,
    eval_normalized_basis,
    eval_raw_basis,
    penalty_quadratic_form,
)

CONFIGS = Path(__file__).resolve().parent.parent / "scripts" / "configs"


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail, t0):
        with capsys.disabled():
            print(f"\ncriterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{time.perf_counter() - t0:.1f}s]")
        assert ok, detail
    return emit


def load(name):
    return json.loads((CONFIGS / name).read_text())


def run_verify(cmd, cfg, tmp, tag, *extra):
    path = tmp / f"{tag}.cfg.json"
    path.write_text(json.dumps(cfg))
    csv_out, json_out = tmp / f"{tag}.csv", tmp / f"{tag}.json"
    rc = cli_main([cmd, "--config", str(path), "--out-csv", str(csv_out), "--out-json", str(json_out), *extra])
    return rc, csv_out, json_out


def test_c01_fisher_closed_forms(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for g in (-0.2, 0.0, 0.5, 1.0):
        mc, _ = oracle_fisher(g, 10**6, seed=11)
        worst = max(worst, float(np.max(np.abs(mc / fisher_info(g) - 1))))
    verdict(1, worst <= 0.01, f"max relative error {worst:.2e} (<= 1e-2)", t0)


def test_c02_orthogonal_fisher(verdict):
    t0 = time.perf_counter()
    rel, off = 0.0, 0.0
    for g in (-0.2, 0.0, 0.5):
        mc, _ = oracle_fisher(g, 10**6, seed=12, ortho=True)
        target = np.array([1 / (g + 1) ** 2, 1 / (2 * g + 1)])
        np.testing.assert_allclose(np.diag(fisher_info_ortho(g)), target, rtol=1e-14)
        rel = max(rel, float(np.max(np.abs(np.diag(mc) / target - 1))))
        off = max(off, abs(float(mc[0, 1])))
    verdict(2, rel <= 0.01 and off <= 0.01, f"diagonal rel error {rel:.2e}, |off-diagonal| {off:.2e}", t0)


def test_c03_penalty_matches_quadrature(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(13)
    worst = 0.0
    for K in (5, 10, 20):
        basis = build_normalized_basis(KnotGrid(K, 3), rng.uniform(size=40 * K))
        knots = basis.grid.knots
        spans = np.unique(knots)
        for m in (1, 2):
            P = penalty_quadratic_form(basis, m)
            for _ in range(20):
                v = rng.normal(size=basis.grid.n_basis)
                # independent evaluation: scipy B-spline on the raw coefficients Psi v
                dspl = interpolate.BSpline(knots, basis.Psi @ v, 3).derivative(m)
                quad = sum(integrate.quad(lambda z: dspl(z) ** 2, a, b, epsabs=0, epsrel=1e-13)[0]
                           for a, b in zip(spans[:-1], spans[1:]))
                worst = max(worst, abs(v @ P @ v - quad) / quad)
    verdict(3, worst <= 1e-5, f"max relative error {worst:.2e} over 120 forms (<= 1e-5)", t0)


def small_data(seed=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(150, 1))
    z = rng.uniform(size=(150, 2))
    g = 0.2 + 0.1 * x[:, 0] + 0.1 * np.sin(2 * np.pi * z[:, 0])
    y = gpd_quantile(g, np.exp(0.2 * z[:, 1]), rng.uniform(size=150))
    return apply_threshold(RawTable(y, x, z), ThresholdSpec("constant", 0.0))


def test_c04_derivatives_match_finite_differences(verdict):
    t0 = time.perf_counter()
    data = small_data()
    rng = np.random.default_rng(14)
    g_err = h_err = 0.0
    for reparam in (False, True):
        design, _ = make_design(data, K=3, lam=0.5, nu=0.3, reparam=reparam)
        spec = design.spec
        centre = fit(design, data).theta.to_vector()
        checked = 0
        while checked < 20:
            v = centre + 0.05 * rng.normal(size=spec.n_params)
            if not math.isfinite(penalized_nll(design, Theta.from_vector(spec, v), data)):
                continue
            checked += 1
            _, g, H = penalized_nll_derivatives(design, Theta.from_vector(spec, v), data)
            gfd, Hfd = np.empty_like(g), np.empty_like(H)
            for i in range(v.size):
                e = np.zeros_like(v)
                e[i] = 1e-5
                fp, gp, _ = penalized_nll_derivatives(design, Theta.from_vector(spec, v + e), data)
                fm, gm, _ = penalized_nll_derivatives(design, Theta.from_vector(spec, v - e), data)
                gfd[i] = (fp - fm) / 2e-5
                Hfd[:, i] = (gp - gm) / 2e-5
            g_err = max(g_err, float(np.max(np.abs(g - gfd)) / np.max(np.abs(gfd))))
            h_err = max(h_err, float(np.max(np.abs(H - Hfd)) / np.max(np.abs(Hfd))))
    ok = g_err <= 1e-6 and h_err <= 1e-4
    verdict(4, ok, f"40 feasible points (both families): gradient {g_err:.2e} (<= 1e-6), "
                   f"Hessian {h_err:.2e} (<= 1e-4)", t0)


@pytest.mark.slow
def test_c05_rate_reproduction(verdict, tmp_path):
    t0 = time.perf_counter()
    rc, _, out = run_verify("verify-rate", load("rate_additive.json"), tmp_path, "rate")
    r = json.loads(out.read_text())["report"]
    verdict(5, rc == 0 and r["checks"]["slope"],
            f"RMSE(gamma) slope {r['slope']:.3f} +/- {r['slope_se']:.3f} in [-0.55, -0.25], target -0.4", t0)


@pytest.mark.slow
def test_c06_parametric_rate(verdict, tmp_path):
    t0 = time.perf_counter()
    rc, _, out = run_verify("verify-rate", load("rate_parametric.json"), tmp_path, "param")
    r = json.loads(out.read_text())["report"]
    verdict(6, rc == 0 and r["checks"]["slope_beta"],
            f"|beta_hat - beta| slope {r['slope_beta']:.3f} +/- {r['slope_beta_se']:.3f} in [-0.6, -0.4]", t0)


@pytest.fixture(scope="module")
def normality(tmp_path_factory):
    t0 = time.perf_counter()
    rc, _, out = run_verify("verify-normality", load("normality.json"), tmp_path_factory.mktemp("norm"), "norm")
    return rc, json.loads(out.read_text())["report"], time.perf_counter() - t0


@pytest.mark.slow
def test_c07_local_normality(verdict, normality):
    t0 = time.perf_counter() - normality[2]
    r = normality[1]
    ok = 0.8 <= r["variance"] <= 1.25 and 0.91 <= r["coverage95"] <= 0.99
    verdict(7, ok, f"standardized variance {r['variance']:.3f} in [0.8, 1.25], "
                   f"coverage95 {r['coverage95']:.3f} in [0.91, 0.99] ({r['used']} reps)", t0)


@pytest.mark.slow
def test_c08_orthogonality(verdict, normality):
    t0 = time.perf_counter()
    r = normality[1]
    verdict(8, abs(r["corr_ortho"]) <= 0.1,
            f"|corr(gamma_hat, log varsigma_hat)| {abs(r['corr_ortho']):.3f} <= 0.1 "
            f"(plain family {r['corr_plain']:.3f})", t0)


def test_c09_basis_invariants(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(19)
    pou = mean = rms = 0.0
    min_eig = math.inf
    for K in (5, 10, 20):
        grid = KnotGrid(K, 3)
        z = rng.uniform(size=50 * K)
        zz = np.concatenate([z, np.linspace(0, 1, 1001)])
        pou = max(pou, float(np.max(np.abs(eval_raw_basis(grid, zz).sum(axis=1) - 1))))
        B = eval_normalized_basis(build_normalized_basis(grid, z), z)
        mean = max(mean, float(np.max(np.abs(B.mean(axis=0)))))
        rms = max(rms, float(np.max(np.abs(np.sqrt((B**2).mean(axis=0)) - 1))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(B.T @ B / z.size)[0]))
    ok = pou <= 1e-12 and mean <= 1e-10 and rms <= 1e-10 and min_eig > 0
    verdict(9, ok, f"partition of unity {pou:.1e}, mean {mean:.1e}, |RMS-1| {rms:.1e}, "
                   f"min Gram eigenvalue {min_eig:.3e}", t0)


def test_c10_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    rate = load("rate_additive.json") | {"n_grid": [200, 400, 800], "reps": 6}
    norm = load("normality.json") | {"n": 400, "reps": 8}
    same = True
    for cmd, cfg in (("verify-rate", rate), ("verify-normality", norm)):
        outs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "2")):
            rc, c, j = run_verify(cmd, cfg, tmp_path, f"{cmd}-{tag}", "--workers", workers)
            outs.append((rc, c.read_bytes(), j.read_bytes()))
        same &= outs[0] == outs[1] == outs[2]
    verdict(10, same, "verify-rate and verify-normality reports byte-identical: repeat and 1 vs 2 workers", t0)
