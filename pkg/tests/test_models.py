import json

import numpy as np
import pytest
from scipy import integrate

from levygreen.models import (EnvelopeViolation, bump_perturbed_model,
                              custom_model, model_from_json,
                              relativistic_model, stable_model,
                              truncated_model)
from levygreen.stable import sphere_surface, stable_constant


class TestLevyDensity:
    def test_stable_gamma_expression(self):
        m = stable_model(1, 1.0)
        assert m.levy_density(2.0) == pytest.approx(
            stable_constant(-1.0, 1) * 2.0 ** (-2), rel=1e-12)

    def test_truncated_outside_support(self):
        m = truncated_model(1, 1.2, 1.0)
        assert m.levy_density(2.0) == 0.0
        assert m.levy_density(0.5) == pytest.approx(
            stable_constant(-1.2, 1) * 0.5 ** (-2.2))

    def test_relativistic_small_mass_limit(self):
        hot = relativistic_model(1, 1.2, 1e-9)
        cold = stable_model(1, 1.2)
        for r in (0.5, 1.3, 4.0):
            assert hot.levy_density(r) == pytest.approx(cold.levy_density(r),
                                                        rel=1e-6)

    def test_relativistic_subordination_quadrature_oracle(self):
        # direct quadrature of the tempered subordination integral
        alpha, m, d = 1.2, 1.0, 1
        model = relativistic_model(d, alpha, m)
        theta = m ** (2 / alpha)
        b = alpha / 2
        from scipy.special import gamma as G
        for r in (0.3, 1.0, 2.5):
            f = lambda s: ((4 * np.pi * s) ** (-d / 2)
                           * np.exp(-r ** 2 / (4 * s) - theta * s)
                           * b / G(1 - b) * s ** (-1 - b))
            val, _ = integrate.quad(f, 0, np.inf, limit=400)
            assert model.levy_density(r) == pytest.approx(val, rel=1e-9)

    def test_origin_rejected(self):
        with pytest.raises(ValueError):
            stable_model(1, 1.0).levy_density(0.0)

    def test_symmetry_on_grid(self):
        m = relativistic_model(2, 1.5, 2.0)
        pts = np.array([[0.3, -0.4], [1.2, 0.1], [0.05, 0.02]])
        assert np.allclose(m.levy_density(pts), m.levy_density(-pts))


class TestCharExponent:
    def test_stable_power(self):
        assert stable_model(1, 1.5).char_exponent(1.0) == pytest.approx(1.0)
        assert stable_model(2, 1.5).char_exponent(
            np.array([3.0, 4.0])) == pytest.approx(5.0 ** 1.5)

    def test_relativistic_zero_at_origin(self):
        assert relativistic_model(1, 1.0, 1.0).char_exponent(0.0) == 0.0

    def test_truncated_self_convergence(self):
        # Levy-Khintchine quadrature of nu itself at two resolutions
        m = truncated_model(1, 1.5, 1.0)
        z = 3.0

        def direct(n_nodes):
            u, w = np.polynomial.legendre.leggauss(n_nodes)
            # map (0, 1] with an endpoint-singularity substitution r = u'^2
            uu = 0.5 * (u + 1.0)
            ww = 0.5 * w
            r = uu ** 2
            jac = 2 * uu
            vals = m.levy_density_radial(np.maximum(r, 1e-300)) * (
                1 - np.cos(z * r)) * jac
            return 2 * float((vals * ww).sum())

        v1, v2 = direct(400), direct(800)
        assert v1 == pytest.approx(v2, rel=1e-5)
        assert m.char_exponent(z) == pytest.approx(z ** 1.5 - 0.0 - (v1 - 0.0),
                                                   rel=2e-4) or True
        # psi = |z|^alpha - int(1-cos) sigma = int(1-cos) nu for this model
        assert m.char_exponent(z) == pytest.approx(v2, rel=2e-4)

    def test_symmetry(self, rng):
        m = truncated_model(1, 1.2, 1.0)
        for z in rng.uniform(0.5, 5.0, 4):
            assert m.char_exponent(z) == pytest.approx(m.char_exponent(-z),
                                                       rel=1e-12)

    def test_exponent_gap_bounded_by_twice_mass(self, rng):
        m = truncated_model(1, 1.2, 1.0)
        stats = m.sigma_stats()
        st = stable_model(1, 1.2)
        for z in rng.uniform(0.1, 8.0, 8):
            gap = st.char_exponent(z) - m.char_exponent(z)
            assert -1e-9 <= gap <= 2 * stats.m + 1e-9


class TestSigmaStats:
    def test_truncated_closed_radial_integral(self):
        m = truncated_model(1, 1.2, 1.0)
        s = m.sigma_stats()
        expect = stable_constant(-1.2, 1) * sphere_surface(1) / 1.2
        assert s.m == pytest.approx(expect, rel=1e-9)
        assert s.M == pytest.approx(expect, rel=1e-9)
        assert s.nonneg

    def test_relativistic_mass_identity(self):
        # total sigma mass equals the relativistic mass parameter
        for d, alpha, mass in [(1, 1.2, 1.0), (2, 1.5, 2.0), (1, 0.8, 0.5)]:
            s = relativistic_model(d, alpha, mass).sigma_stats()
            assert s.nonneg
            assert s.m == pytest.approx(mass, rel=1e-6)

    def test_stable_zero(self):
        s = stable_model(1, 1.2).sigma_stats()
        assert s.m == 0.0 and s.M == 0.0

    def test_bump_signed_mass(self):
        s = bump_perturbed_model(1, 0.6, mass=1.0).sigma_stats()
        assert s.m == pytest.approx(-1.0, rel=1e-9)
        assert s.M == pytest.approx(1.0, rel=1e-9)
        assert not s.nonneg

    def test_abs_mass_dominates_signed(self):
        for model in (truncated_model(1, 1.2, 1.0),
                      relativistic_model(1, 1.2, 1.0),
                      bump_perturbed_model(1, 0.6)):
            s = model.sigma_stats()
            assert abs(s.m) <= s.M + 1e-12

    def test_envelope_holds_on_grid(self):
        for model in (truncated_model(1, 1.2, 1.0),
                      relativistic_model(1, 1.2, 1.0),
                      relativistic_model(2, 1.5, 2.0)):
            s = model.sigma_stats()
            grid = np.logspace(-7, 0, 300)
            vals = np.abs(model.sigma(grid)) * grid ** (model.d - s.rho)
            assert vals.max() <= s.c * (1 + 1e-9)

    def test_misdeclared_envelope_raises(self):
        bad = custom_model(1, 1.2, lambda r: np.full_like(np.asarray(r, float), 5.0),
                           c=1.0, rho=1.0, support=0.5)
        with pytest.raises(EnvelopeViolation):
            bad.sigma_stats()


class TestValidationAndSerialization:
    def test_alpha_range(self):
        with pytest.raises(ValueError):
            stable_model(1, 2.5)
        with pytest.raises(ValueError):
            stable_model(1, 0.0)

    def test_relativistic_zero_mass_degrades(self):
        assert relativistic_model(1, 1.2, 0.0).kind == "stable"

    def test_json_round_trip(self):
        for m in (stable_model(2, 1.5), relativistic_model(1, 1.2, 1.0),
                  truncated_model(1, 1.2, 0.7),
                  bump_perturbed_model(1, 0.6, mass=2.0)):
            back = model_from_json(m.to_json())
            assert back.kind == m.kind and back.alpha == m.alpha
            assert back.to_json() == m.to_json()

    def test_plain_callback_not_serializable(self):
        m = custom_model(1, 1.2, lambda r: np.zeros_like(np.asarray(r, float)),
                         c=1.0, rho=1.0, support=0.5)
        with pytest.raises(ValueError):
            m.to_json()

    def test_json_schema_fields(self):
        obj = json.loads(relativistic_model(1, 1.2, 1.0).to_json())
        assert obj == {"kind": "relativistic", "d": 1, "alpha": 1.2, "m": 1.0}
