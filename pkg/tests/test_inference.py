"""Post-fit inference: kernel estimates, sandwich covariance, rates, entropy.

The conditional-mean oracle is available in closed form for the dependent
design (E[X_j | Z] = (Z_1 + 1/2) / 2), the residual density at zero is known
analytically for every built-in law, and the sandwich algebra is small
enough to check against hand-computed matrix expressions.
"""

import json
import math

import numpy as np
import pytest

from sparseplm.datagen import Dataset, GenConfig, generate
from sparseplm.errors import (ConfigError, DegenerateDataError,
                              IllConditionedError)
from sparseplm.inference import (SmoothnessSpec, covering_bound, estimate_f0,
                                 estimate_phi_star, estimation_metrics,
                                 sandwich_covariance, theoretical_rate)
from sparseplm.network import PlmParams, WeightStack


class TestPhiStar:
    def test_dependent_design_matches_closed_form(self):
        data = generate(GenConfig(n=2000, d=2, l=1, beta0=(1.0, -1.0),
                                  dependent=True, seed=5))
        fit = estimate_phi_star(data)
        want = (data.Z[:, :1] + 0.5) / 2.0
        rms = np.sqrt(np.mean((fit.fitted - want) ** 2))
        assert rms < 0.05

    def test_independent_design_is_flat(self):
        data = generate(GenConfig(n=2000, d=1, l=1, beta0=(1.0,), seed=6))
        fit = estimate_phi_star(data)
        assert np.sqrt(np.mean((fit.fitted - 0.5) ** 2)) < 0.05

    def test_chunking_does_not_change_predictions(self):
        data = generate(GenConfig(n=300, d=2, l=2, beta0=(1.0, -1.0),
                                  dependent=True, seed=7))
        fit = estimate_phi_star(data)
        q = np.random.default_rng(1).random((40, 2))
        np.testing.assert_allclose(fit.predict(q, chunk=7),
                                   fit.predict(q, chunk=512), rtol=1e-12)

    def test_query_dimension_check(self):
        data = generate(GenConfig(n=100, d=1, l=1, beta0=(1.0,), seed=8))
        with pytest.raises(ConfigError):
            estimate_phi_star(data).predict(np.zeros((3, 2)))

    def test_small_samples_and_bad_bandwidth_raise(self):
        small = generate(GenConfig(n=10, d=1, l=1, beta0=(1.0,), seed=9))
        with pytest.raises(ConfigError):
            estimate_phi_star(small)
        data = generate(GenConfig(n=100, d=1, l=1, beta0=(1.0,), seed=9))
        with pytest.raises(ConfigError):
            estimate_phi_star(data, bandwidth=0.0)

    def test_scalar_bandwidth_override(self):
        data = generate(GenConfig(n=100, d=1, l=1, beta0=(1.0,), seed=10))
        fit = estimate_phi_star(data, bandwidth=0.25)
        np.testing.assert_array_equal(fit.bandwidths, [0.25])


class TestF0:
    def test_within_five_percent_of_analytic_values(self):
        # the bias at the residual cusp is O(h), so this needs the large-n
        # regime; at n = 1e5 the rule-of-thumb bandwidth sits within a couple
        # of percent for all three laws
        laws = [("laplace", (1.0,)), ("student_t", (3.0,)),
                ("contaminated_normal", (0.1, 5.0))]
        for law, params in laws:
            c = GenConfig(n=100_000, d=1, l=1, beta0=(0.0,), error=law,
                          error_params=params, seed=1)
            from sparseplm.datagen import error_density_at_zero, true_g_batch
            data = generate(c)
            eps = data.Y - true_g_batch(c, data.Z)
            got = estimate_f0(eps)
            assert got == pytest.approx(error_density_at_zero(c), rel=0.05), law

    def test_explicit_bandwidth_matches_direct_formula(self):
        rng = np.random.default_rng(12)
        r = rng.normal(size=500)
        h = 0.2
        want = np.mean(np.exp(-0.5 * (r / h) ** 2)) / (h * math.sqrt(2 * math.pi))
        assert estimate_f0(r, bandwidth=h) == pytest.approx(want, rel=1e-12)

    def test_degenerate_residuals_raise(self):
        with pytest.raises(DegenerateDataError):
            estimate_f0(np.zeros(100))

    def test_validation(self):
        with pytest.raises(ConfigError):
            estimate_f0(np.arange(10, dtype=float))
        with pytest.raises(ConfigError):
            estimate_f0(np.random.default_rng(0).normal(size=100),
                        bandwidth=-1.0)


def flat_theta(d):
    return PlmParams(np.zeros(d), WeightStack.zeros((1, 2, 1)), 10.0)


class TestSandwich:
    def setup_method(self):
        rng = np.random.default_rng(21)
        self.n = 600
        self.X = rng.random((self.n, 2))
        self.data = Dataset(self.X, rng.normal(size=self.n),
                            rng.random((self.n, 1)))

    def test_matches_hand_algebra_with_scalar_density(self):
        f0 = 0.4
        rep = sandwich_covariance(self.data, flat_theta(2),
                                  np.zeros((self.n, 2)), f0)
        S1 = self.X.T @ self.X / self.n
        np.testing.assert_allclose(rep.Sigma1_hat, S1, rtol=1e-12)
        np.testing.assert_allclose(rep.Sigma2_hat, f0 * S1, rtol=1e-12)
        want = 0.25 / (self.n * f0 ** 2) * np.linalg.inv(S1)
        np.testing.assert_allclose(rep.sandwich_cov, want, rtol=1e-9)

    def test_unit_factor_is_four_times_quarter(self):
        q = sandwich_covariance(self.data, flat_theta(2),
                                np.zeros((self.n, 2)), 0.5, factor="quarter")
        u = sandwich_covariance(self.data, flat_theta(2),
                                np.zeros((self.n, 2)), 0.5, factor="unit")
        np.testing.assert_allclose(u.sandwich_cov, 4.0 * q.sandwich_cov,
                                   rtol=1e-12)

    def test_vector_density_hook(self):
        rng = np.random.default_rng(22)
        f = rng.uniform(0.2, 0.8, size=self.n)
        rep = sandwich_covariance(self.data, flat_theta(2),
                                  np.zeros((self.n, 2)), f)
        S2 = (self.X * f[:, None]).T @ self.X / self.n
        np.testing.assert_allclose(rep.Sigma2_hat, S2, rtol=1e-12)
        assert rep.f0_hat == pytest.approx(float(f.mean()))
        with pytest.raises(ConfigError):
            sandwich_covariance(self.data, flat_theta(2),
                                np.zeros((self.n, 2)), f[:-1])

    def test_interval_symmetry_and_quantile(self):
        beta = np.array([0.7, -0.3])
        theta = PlmParams(beta, WeightStack.zeros((1, 2, 1)), 10.0)
        rep = sandwich_covariance(self.data, theta, np.zeros((self.n, 2)),
                                  0.5, level=0.9)
        np.testing.assert_allclose(rep.ci_upper - beta, beta - rep.ci_lower,
                                   rtol=1e-12)
        half = rep.ci_upper - beta
        want = 1.6448536269514722 * np.sqrt(np.diag(rep.sandwich_cov))
        np.testing.assert_allclose(half, want, rtol=1e-12)

    def test_collinear_design_raises_with_condition_number(self):
        X = np.c_[self.X[:, :1], self.X[:, :1]]  # identical columns
        data = Dataset(X, self.data.Y, self.data.Z)
        with pytest.raises(IllConditionedError) as err:
            sandwich_covariance(data, flat_theta(2), np.zeros((self.n, 2)), 0.5)
        assert err.value.cond > 1e8 or not np.isfinite(err.value.cond)

    def test_validation(self):
        with pytest.raises(ConfigError):
            sandwich_covariance(self.data, flat_theta(2),
                                np.zeros((self.n, 2)), 0.5, factor="half")
        with pytest.raises(ConfigError):
            sandwich_covariance(self.data, flat_theta(2),
                                np.zeros((self.n, 2)), 0.5, level=1.0)

    def test_report_serializes(self):
        rep = sandwich_covariance(self.data, flat_theta(2),
                                  np.zeros((self.n, 2)), 0.5)
        payload = json.dumps(rep.to_dict(), sort_keys=True)
        assert "sandwich_cov" in payload


class TestRates:
    def test_effective_smoothness_hand_example(self):
        spec = SmoothnessSpec(gamma=(2.0, 0.5), dbar=(1, 1))
        assert spec.effective() == pytest.approx((1.0, 0.5))
        zeta, rate = theoretical_rate(spec, 10_000)
        assert zeta == pytest.approx(0.25)  # min(1/3, 1/4)
        assert rate == pytest.approx(10_000 ** -0.25, rel=1e-12)

    def test_composition_discounts_only_rough_layers(self):
        # later layers smoother than 1 leave earlier exponents untouched
        spec = SmoothnessSpec(gamma=(1.5, 2.0, 3.0), dbar=(2, 1, 1))
        assert spec.effective() == pytest.approx((1.5, 2.0, 3.0))

    def test_rate_decreases_in_n(self):
        spec = SmoothnessSpec((2.0,), (1,))
        rates = [theoretical_rate(spec, n)[1] for n in (100, 1000, 10_000)]
        assert rates[0] > rates[1] > rates[2]

    def test_validation(self):
        with pytest.raises(ConfigError):
            SmoothnessSpec((), ())
        with pytest.raises(ConfigError):
            SmoothnessSpec((1.0, 2.0), (1,))
        with pytest.raises(ConfigError):
            SmoothnessSpec((0.0,), (1,))
        with pytest.raises(ConfigError):
            SmoothnessSpec((1.0,), (0,))


class TestCoveringBound:
    def test_frozen_value(self):
        # widths (1,1,1): H = 2*2*2 = 8, limit = 2*64*3 = 384
        got = covering_bound(1.0, s=1, depth=2, widths=(1, 1, 1))
        assert got == pytest.approx(2.0 * math.log(384.0), rel=1e-14)
        assert got == pytest.approx(11.901285105175454, rel=1e-14)

    def test_monotone_in_epsilon_and_sparsity(self):
        a = covering_bound(0.01, 5, 1, (1, 4))
        b = covering_bound(0.1, 5, 1, (1, 4))
        c = covering_bound(0.1, 9, 1, (1, 4))
        assert a > b and c > b

    def test_validation(self):
        with pytest.raises(ConfigError):
            covering_bound(1.0, 1, 2, (1, 1))  # widths/depth mismatch
        with pytest.raises(ConfigError):
            covering_bound(0.0, 1, 1, (1, 1))
        with pytest.raises(ConfigError):
            covering_bound(1e9, 1, 1, (1, 1))  # above the log's argument limit


class TestEstimationMetrics:
    def test_zero_network_recovers_signal_size(self):
        c = GenConfig(n=100, d=2, l=1, beta0=(1.0, -1.0), seed=30)
        theta = PlmParams([1.0, -1.0], WeightStack.zeros((1, 2, 1)), 10.0)
        m = estimation_metrics(theta, c, eval_seed=3, grid_size=200_000)
        assert m.beta_err == 0.0
        assert m.g_err == pytest.approx(math.sqrt(0.5), rel=0.02)  # RMS of sine
        assert m.d_theta == pytest.approx(m.g_err, rel=1e-12)  # beta part exact

    def test_beta_error_is_sup_norm(self):
        c = GenConfig(n=100, d=2, l=1, beta0=(1.0, -1.0), seed=31)
        theta = PlmParams([1.3, -0.9], WeightStack.zeros((1, 2, 1)), 10.0)
        m = estimation_metrics(theta, c, eval_seed=4, grid_size=100)
        assert m.beta_err == pytest.approx(0.3, rel=1e-12)

    def test_deterministic_in_eval_seed(self):
        c = GenConfig(n=100, d=1, l=1, beta0=(0.5,), seed=32)
        theta = PlmParams([0.7], WeightStack.zeros((1, 2, 1)), 10.0)
        a = estimation_metrics(theta, c, eval_seed=9)
        b = estimation_metrics(theta, c, eval_seed=9)
        assert a == b

    def test_requires_generating_config(self):
        theta = PlmParams([0.5], WeightStack.zeros((1, 2, 1)), 10.0)
        with pytest.raises(ConfigError):
            estimation_metrics(theta, {"n": 100}, eval_seed=0)
