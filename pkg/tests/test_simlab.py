import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpdgam.fitter import fit, make_design
from gpdgam.gpd import fisher_info, fisher_info_ortho
from gpdgam.pot import ThresholdSpec, apply_threshold
from gpdgam.simlab import (
    AdditiveTruth,
    ExperimentInvalidError,
    FitSettings,
    Scenario,
    ScenarioError,
    generate,
    oracle_fisher,
    replicate_seed,
    run_normality_experiment,
    run_rate_experiment,
    splitmix64,
    to_json,
)

INTERCEPT_ONLY = FitSettings(lam=1e8, nu=1e8, K=1)


def const_scenario(g, **kw):
    return Scenario("exact-gpd", AdditiveTruth(g), **kw)


def intercept_fit(data):
    design, _ = make_design(data, K=1, lam=1e8, nu=1e8)
    return fit(design, data)


class TestSeeds:
    def test_splitmix_reference(self):
        # first outputs of the reference splitmix64 stream seeded with 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF

    @given(st.integers(0, 2 ** 63), st.integers(0, 100), st.integers(0, 100))
    def test_replicate_seed_deterministic(self, seed, i, r):
        assert replicate_seed(seed, i, r) == replicate_seed(seed, i, r)
        assert 0 <= replicate_seed(seed, i, r) < 2 ** 64

    def test_distinct_streams(self):
        seeds = {replicate_seed(1, i, r) for i in range(10) for r in range(100)}
        assert len(seeds) == 1000


class TestScenario:
    def test_round_trip(self):
        sc = Scenario("burr", AdditiveTruth(0.4, (0.1,), (("sin", 0.1),)), threshold=ThresholdSpec("quantile", 0.9),
                      burr_k=2.0, seed=3)
        back = Scenario.from_dict(json.loads(json.dumps(sc.to_dict())))
        assert back == sc
        assert sc.rho == -0.5

    @pytest.mark.parametrize("kw", [
        dict(family="burr", gamma_fn=AdditiveTruth(-0.1), sign_regime="S2"),
        dict(family="reversed-burr", gamma_fn=AdditiveTruth(-0.5), sign_regime="S2",
             threshold=ThresholdSpec("quantile", 0.9)),
        dict(family="gaussian", gamma_fn=AdditiveTruth(0.1), sign_regime="S3"),
        dict(family="exact-gpd", gamma_fn=AdditiveTruth(0.2), threshold=ThresholdSpec("quantile", 0.9)),
        dict(family="exact-gpd", gamma_fn=AdditiveTruth(0.2), exceedance_prob=0.5),
        dict(family="weibull", gamma_fn=AdditiveTruth(0.2)),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ScenarioError):
            Scenario(**kw)

    def test_unknown_field(self):
        d = const_scenario(0.2).to_dict() | {"colour": 1}
        with pytest.raises(ScenarioError, match="colour"):
            Scenario.from_dict(d)

    def test_truth_smooths_are_centred(self):
        for name in ("sin", "cos", "linear"):
            t = AdditiveTruth(0.0, (), ((name, 1.0),))
            z = np.linspace(0, 1, 100_001)[:, None]
            assert abs(np.mean(t(np.zeros((z.shape[0], 0)), z))) < 1e-4


class TestGenerate:
    def test_exact_gpd_mean(self):
        raw, _ = generate(const_scenario(0.2), 10 ** 5, 0)
        y = raw.y
        assert abs(y.mean() - 1.25) <= 3 * y.std() / math.sqrt(y.size)

    def test_exceedance_probability(self):
        sc = const_scenario(0.2, threshold=ThresholdSpec("constant", 2.0), exceedance_prob=0.25)
        raw, _ = generate(sc, 40_000, 1)
        data = apply_threshold(raw, sc.threshold)
        assert data.exceedance_fraction == pytest.approx(0.25, abs=0.01)
        assert sc.N_for(1000) == 4000

    def test_deterministic(self):
        sc = Scenario("exact-gpd", AdditiveTruth(0.3, (0.1,), (("sin", 0.1),)))
        a, _ = generate(sc, 100, 7)
        b, _ = generate(sc, 100, 7)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.z, b.z)

    def test_gaussian_shape_near_zero(self):
        sc = Scenario("gaussian", AdditiveTruth(0.0), threshold=ThresholdSpec("quantile", 0.99), sign_regime="S3")
        raw, _ = generate(sc, 10 ** 5, 2)
        res = intercept_fit(apply_threshold(raw, sc.threshold))
        assert abs(res.theta.beta[0]) <= 0.1

    def test_reversed_burr_has_endpoint(self):
        sc = Scenario("reversed-burr", AdditiveTruth(-0.2), threshold=ThresholdSpec("quantile", 0.9),
                      sign_regime="S2", endpoint=10.0)
        raw, _ = generate(sc, 10 ** 4, 3)
        assert raw.y.max() < 10.0

    def test_burr_bias_exceeds_exact(self):
        # Burr tails carry a second-order bias at finite thresholds; exact GPD does not
        burr = Scenario("burr", AdditiveTruth(0.5), threshold=ThresholdSpec("quantile", 0.8), burr_k=1.0)
        exact = const_scenario(0.5)
        eb, ee = [], []
        for r in range(60):
            raw, _ = generate(burr, 25_000, replicate_seed(5, r))
            eb.append(intercept_fit(apply_threshold(raw, burr.threshold)).theta.beta[0] - 0.5)
            raw, _ = generate(exact, 5000, replicate_seed(6, r))
            ee.append(intercept_fit(apply_threshold(raw, exact.threshold)).theta.beta[0] - 0.5)
        se = lambda e: np.std(e, ddof=1) / math.sqrt(len(e))
        assert np.mean(eb) < -4 * se(eb)
        assert abs(np.mean(ee)) < 3 * se(ee)

    def test_scale_grows_with_threshold(self):
        sc = Scenario("burr", AdditiveTruth(0.5), threshold=ThresholdSpec("constant", 5.0), burr_k=1.0)
        raw, _ = generate(sc, 400_000, 4)
        u = [intercept_fit(apply_threshold(raw, ThresholdSpec("constant", w))).theta.u[0] for w in (5.0, 20.0)]
        assert u[1] - u[0] == pytest.approx(math.log(4.0), abs=0.1)


class TestOracle:
    @pytest.mark.parametrize("g", [0.0, 0.5])
    def test_plain(self, g):
        mean, se = oracle_fisher(g, 10 ** 6, seed=1)
        np.testing.assert_allclose(mean, fisher_info(g), rtol=0.01)
        assert np.all(se > 0)

    def test_ortho(self):
        mean, _ = oracle_fisher(0.5, 10 ** 6, seed=2, ortho=True)
        np.testing.assert_allclose(np.diag(mean), np.diag(fisher_info_ortho(0.5)), rtol=0.01)
        assert abs(mean[0, 1]) <= 0.01

    def test_plain_sampling_agrees(self):
        mean, se = oracle_fisher(0.2, 10 ** 6, seed=3, stratified=False)
        assert np.all(np.abs(mean - fisher_info(0.2)) <= 5 * se)


class TestExperiments:
    def test_intercepts_unbiased(self):
        errs = []
        for r in range(200):
            raw, _ = generate(const_scenario(0.2), 10_000, replicate_seed(10, r))
            res = intercept_fit(apply_threshold(raw, ThresholdSpec("constant", 0.0)))
            errs.append([res.theta.beta[0] - 0.2, res.theta.u[0]])
        errs = np.array(errs)
        assert np.all(np.abs(errs.mean(axis=0)) <= 3 * errs.std(axis=0, ddof=1) / math.sqrt(len(errs)))

    def test_slope_se_scales_with_reps(self):
        sc = const_scenario(0.2)
        grid = [200, 400, 800]
        a = run_rate_experiment(sc, grid, 100, settings=INTERCEPT_ONLY, seed=1)
        b = run_rate_experiment(sc, grid, 200, settings=INTERCEPT_ONLY, seed=1)
        assert 0.6 <= b.slope_beta_se / a.slope_beta_se <= 0.85

    def test_serial_parallel_identical(self):
        sc = Scenario("exact-gpd", AdditiveTruth(0.5, (0.1,), (("sin", 0.2),)),
                      AdditiveTruth(0.0, (), (("cos", 0.1),)), seed=4)
        a = run_rate_experiment(sc, [200, 400], 3, workers=1)
        b = run_rate_experiment(sc, [200, 400], 3, workers=2)
        assert to_json(a.summary()) == to_json(b.summary())
        assert a.to_csv() == b.to_csv()
        c = run_normality_experiment(sc, 300, 4, [1.0, 0.0], [0.5], workers=1)
        d = run_normality_experiment(sc, 300, 4, [1.0, 0.0], [0.5], workers=2)
        assert to_json(c.summary()) == to_json(d.summary())

    def test_too_many_drops(self):
        with pytest.raises(ExperimentInvalidError):
            run_rate_experiment(const_scenario(0.2), [300, 600], 5, settings=FitSettings(max_iter=1))

    def test_report_contents(self):
        r = run_rate_experiment(const_scenario(0.2), [200, 400], 4, settings=INTERCEPT_ONLY, seed=2)
        assert r.expected_slope == pytest.approx(-0.4)
        assert set(r.checks) == {"slope_beta"}
        lines = r.to_csv().splitlines()
        assert lines[0].startswith("n,K,used,dropped") and len(lines) == 3

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            run_rate_experiment(const_scenario(0.2), [400, 200], 4)
        with pytest.raises(ValueError):
            run_rate_experiment(const_scenario(0.2), [200, 400], 1)
