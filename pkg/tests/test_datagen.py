"""Data generation: determinism, supports, noise laws, round trips.

Density values at zero are checked two independent ways: against hand-reduced
constants and against a numerical integral oracle (the CDF derivative via
scipy.integrate on the analytic density formula is circular, so instead the
empirical CDF slope around 0 on large samples gives the independent check).
"""

import math

import numpy as np
import pytest

from sparseplm.datagen import (Dataset, GenConfig, error_density_at_zero,
                               generate, true_g, true_g_batch)
from sparseplm.errors import ConfigError


def cfg(**kw):
    base = dict(n=200, d=2, l=1, beta0=(1.0, -1.0), seed=3)
    base.update(kw)
    return GenConfig(**base)


class TestGenConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            cfg(n=0)
        with pytest.raises(ConfigError):
            cfg(d=0)
        with pytest.raises(ConfigError):
            cfg(beta0=(1.0,))  # d is 2
        with pytest.raises(ConfigError):
            cfg(g0="cubic")
        with pytest.raises(ConfigError):
            cfg(g0_coeffs=(1.0, 2.0))  # l is 1
        with pytest.raises(ConfigError):
            cfg(error="cauchy")
        with pytest.raises(ConfigError):
            cfg(error="laplace", error_params=(0.0,))
        with pytest.raises(ConfigError):
            cfg(error="contaminated_normal", error_params=(1.5, 3.0))
        with pytest.raises(ConfigError):
            cfg(error="contaminated_normal", error_params=(0.1,))

    def test_dict_round_trip(self):
        c = cfg(g0="additive_smooth", g0_coeffs=(2.0,), dependent=True,
                error="student_t", error_params=(3.0,))
        assert GenConfig.from_dict(c.to_dict()) == c


class TestGenerate:
    def test_deterministic_in_seed(self):
        a, b = generate(cfg()), generate(cfg())
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)
        np.testing.assert_array_equal(a.Z, b.Z)
        c = generate(cfg(seed=4))
        assert not np.array_equal(a.Y, c.Y)

    def test_supports_and_shapes(self):
        data = generate(cfg(n=500, dependent=True))
        assert data.X.shape == (500, 2) and data.Z.shape == (500, 1)
        assert data.X.min() >= 0.0 and data.X.max() <= 1.0
        assert data.Z.min() >= 0.0 and data.Z.max() <= 1.0

    def test_model_identity(self):
        # Y minus the known signal recovers exactly the drawn noise law:
        # residuals must be symmetric-ish with median near 0 at large n
        c = cfg(n=60_000, seed=12)
        data = generate(c)
        eps = data.Y - data.X @ np.array(c.beta0) - true_g_batch(c, data.Z)
        assert abs(np.median(eps)) < 0.02
        # laplace(1): Var = 2 b^2
        assert np.var(eps) == pytest.approx(2.0, rel=0.05)

    def test_dependent_mode_couples_x_to_z(self):
        c = cfg(n=50_000, dependent=True, seed=8)
        data = generate(c)
        # X_j = (V_j + Z_1)/2 with V uniform: E[X_j | Z_1] = (Z_1 + 1/2) / 2
        for j in range(2):
            r = np.corrcoef(data.X[:, j], data.Z[:, 0])[0, 1]
            assert r == pytest.approx(np.sqrt(0.5), abs=0.02)
        ind = generate(cfg(n=50_000, seed=8))
        assert abs(np.corrcoef(ind.X[:, 0], ind.Z[:, 0])[0, 1]) < 0.02

    def test_draw_order_shares_z_across_modes(self):
        # Z is drawn first, so flipping `dependent` cannot change Z
        a = generate(cfg(seed=21))
        b = generate(cfg(seed=21, dependent=True))
        np.testing.assert_array_equal(a.Z, b.Z)

    def test_take(self):
        data = generate(cfg())
        batch = data.take(np.array([3, 1, 4]))
        np.testing.assert_array_equal(batch.Y, data.Y[[3, 1, 4]])
        np.testing.assert_array_equal(batch.X, data.X[[3, 1, 4]])


class TestTrueG:
    def test_sine(self):
        c = cfg()
        assert true_g(c, [0.25]) == pytest.approx(1.0)
        assert true_g(c, [0.5]) == pytest.approx(0.0, abs=1e-12)

    def test_additive_smooth(self):
        c = cfg(l=2, g0="additive_smooth", g0_coeffs=(2.0, -1.0))
        want = 2.0 * math.cos(math.pi * 0.3) - math.cos(math.pi * 0.7)
        assert true_g(c, [0.3, 0.7]) == pytest.approx(want, rel=1e-12)
        defaulted = cfg(l=2, g0="additive_smooth")
        assert true_g(defaulted, [0.0, 0.0]) == pytest.approx(2.0)

    def test_composite(self):
        c = cfg(l=2, g0="composite")
        z = np.array([0.25, 0.75])
        want = math.exp(-((0.25 - 0.5) ** 2 + (0.75 - 0.5) ** 2)) * 1.0
        assert true_g(c, z) == pytest.approx(want, rel=1e-12)

    def test_dimension_check(self):
        with pytest.raises(ConfigError):
            true_g_batch(cfg(), np.zeros((3, 2)))


class TestErrorLaws:
    def test_median_zero_all_laws(self):
        laws = [("laplace", (0.7,)), ("student_t", (3.0,)),
                ("contaminated_normal", (0.1, 5.0))]
        for law, params in laws:
            c = cfg(n=80_000, error=law, error_params=params, seed=5)
            data = generate(c)
            eps = data.Y - data.X @ np.array(c.beta0) - true_g_batch(c, data.Z)
            assert abs(np.median(eps)) < 0.02, law

    def test_density_at_zero_constants(self):
        # hand-reduced: laplace(b) 1/(2b); t_1 is Cauchy 1/pi;
        # contaminated(rho, kappa) (1 - rho + rho/kappa) / sqrt(2 pi)
        assert error_density_at_zero(cfg(error_params=(2.0,))) == pytest.approx(0.25)
        c1 = cfg(error="student_t", error_params=(1.0,))
        assert error_density_at_zero(c1) == pytest.approx(1.0 / math.pi, rel=1e-12)
        cn = cfg(error="contaminated_normal", error_params=(0.2, 4.0))
        want = 0.85 / math.sqrt(2.0 * math.pi)
        assert error_density_at_zero(cn) == pytest.approx(want, rel=1e-12)

    def test_density_at_zero_matches_empirical_cdf_slope(self):
        rng_laws = [("laplace", (1.0,)), ("student_t", (4.0,)),
                    ("contaminated_normal", (0.1, 3.0))]
        for law, params in rng_laws:
            c = cfg(n=400_000, error=law, error_params=params, seed=17)
            data = generate(c)
            eps = np.sort(data.Y - data.X @ np.array(c.beta0)
                          - true_g_batch(c, data.Z))
            h = 0.05
            slope = (np.searchsorted(eps, h) - np.searchsorted(eps, -h)) / (
                2 * h * eps.size)
            assert slope == pytest.approx(error_density_at_zero(c), rel=0.05), law

    def test_student_t_gamma_identity(self):
        # integer dof admits an exact closed form: f(0) for nu=2 is 1/(2 sqrt 2)
        c = cfg(error="student_t", error_params=(2.0,))
        assert error_density_at_zero(c) == pytest.approx(1.0 / (2.0 * math.sqrt(2.0)),
                                                         rel=1e-12)


class TestDatasetIO:
    def test_csv_round_trip_is_exact(self, tmp_path):
        data = generate(cfg(n=37))
        path = tmp_path / "d.csv"
        data.to_csv(path)
        back = Dataset.from_csv(path)
        np.testing.assert_array_equal(back.X, data.X)
        np.testing.assert_array_equal(back.Y, data.Y)
        np.testing.assert_array_equal(back.Z, data.Z)

    def test_sidecar_carries_provenance(self, tmp_path):
        import json
        data = generate(cfg(n=5))
        path = tmp_path / "d.csv"
        data.to_csv(path)
        side = json.load(open(str(path) + ".json"))
        assert side["provenance"]["n"] == 5
        assert side["provenance"]["beta0"] == [1.0, -1.0]

    def test_external_rows_written_by_hand(self, tmp_path):
        path = tmp_path / "mini.csv"
        path.write_text("x1,z1,y\n0.5,0.25,1.5\n0.1,0.9,-0.2\n")
        data = Dataset.from_csv(path)
        assert data.n == 2 and data.d == 1 and data.l == 1
        np.testing.assert_array_equal(data.Y, [1.5, -0.2])

    def test_bad_headers_and_ranges(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError):
            Dataset.from_csv(path)
        with pytest.raises(ConfigError):
            Dataset(X=[[2.0]], Y=[0.0], Z=[[0.5]])  # X outside the cube
        with pytest.raises(ConfigError):
            Dataset(X=[[0.5], [0.5]], Y=[0.0], Z=[[0.5], [0.5]])
