import numpy as np
import pytest
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.stats import chisquare, kstest

from levygreen.geometry import Ball, Interval
from levygreen.paths import one_sided_stable_rv
from levygreen.stable import (PhiProfile, ball_exit_radial_cdf,
                              ball_exit_sample, ball_green, ball_mean_exit,
                              ball_poisson_kernel, cached_density,
                              green_envelope, interval_green, potential_kernel,
                              stable_constant, stable_density)


class TestStableConstant:
    def test_gamma_expression(self):
        for rho, d in [(-1.2, 1), (1.0, 3), (0.5, 2), (-0.7, 2)]:
            expect = gamma_fn((d - rho) / 2) / (
                np.pi ** (d / 2) * 2.0 ** rho * abs(gamma_fn(rho / 2)))
            assert stable_constant(rho, d) == pytest.approx(expect, rel=1e-12)

    def test_known_value(self):
        # A(1, 3) = 1 / (2 pi^2), the Newtonian-type kernel constant
        assert stable_constant(1, 3) == pytest.approx(1 / (2 * np.pi ** 2),
                                                      rel=1e-12)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            stable_constant(0, 2)
        with pytest.raises(ValueError):
            stable_constant(2, 2)


class TestStableDensity:
    def test_cauchy_at_zero(self):
        assert stable_density(1.0, 0.0, 1.0, 1) == pytest.approx(1 / np.pi,
                                                                 rel=1e-10)

    def test_cauchy_closed_form(self):
        assert stable_density(2.0, 1.0, 1.0, 1) == pytest.approx(
            2 / (np.pi * 5), rel=1e-9)

    def test_scaling_identity(self, rng):
        dens = cached_density(1.4, 1)
        for _ in range(20):
            t = float(rng.uniform(0.2, 5.0))
            x = float(rng.uniform(-8, 8))
            lhs = dens(t, x, exact=True)
            rhs = t ** (-1 / 1.4) * dens(1.0, x * t ** (-1 / 1.4), exact=True)
            assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)

    def test_series_matches_quadrature_at_switch(self):
        # the tail expansion is asymptotic: ~1e-5 relative right at the
        # switch radius, tightening quickly further out
        from levygreen.stable import _density_quad_t1, _density_series_t1
        for r, tol in ((10.5, 5e-5), (14.0, 1e-5), (30.0, 1e-7)):
            assert _density_series_t1(np.array([r]), 1.2, 1)[0] == pytest.approx(
                _density_quad_t1(r, 1.2, 1), rel=tol)

    def test_d2_against_subordinated_mc(self, rng):
        # kernel-density oracle from exact subordinated Gaussian samples
        n = 10 ** 6
        s = one_sided_stable_rv(0.75, rng, n)
        pts = np.sqrt(2 * s)[:, None] * rng.standard_normal((n, 2))
        x0 = np.array([1.0, 0.0])
        h = 0.06
        d2 = ((pts - x0) ** 2).sum(axis=1) / h ** 2
        k = np.where(d2 < 1, (1 - d2) * 2 / (np.pi * h ** 2), 0.0)
        kde, se = k.mean(), k.std() / np.sqrt(n)
        val = stable_density(1.0, x0, 1.5, 2)
        assert abs(kde - val) <= 3 * se + 2e-4  # smoothing bias allowance

    def test_tail_upper_bound_profile(self):
        # p(t,x) <= C min(t^{-d/a}, t |x|^{-d-a}); report the fitted constant
        dens = cached_density(1.2, 1)
        worst = 0.0
        for t in (0.3, 1.0, 3.0):
            for x in np.linspace(0.0, 20, 41):
                bound = min(t ** (-1 / 1.2), t * x ** (-2.2)) if x > 0 \
                    else t ** (-1 / 1.2)
                worst = max(worst, dens(t, x) / bound)
        print(f"tail-bound fitted constant: {worst:.3f}")
        assert np.isfinite(worst) and worst < 10.0

    def test_tail_mass(self):
        dens = cached_density(1.2, 1)
        val = dens.tail_mass(1.0, 5.0)
        # integrate the density directly as the oracle
        direct, _ = integrate.quad(lambda x: dens(1.0, x), 5.0, np.inf,
                                   limit=400)
        assert val == pytest.approx(2 * direct, rel=1e-5)


class TestPotentialKernel:
    def test_newtonian_value(self):
        assert potential_kernel(np.array([1.0, 0, 0]), 1.0, 3) == pytest.approx(
            1 / (2 * np.pi ** 2), rel=1e-12)

    def test_homogeneity(self):
        v1 = potential_kernel(np.array([1.0, 0, 0]), 1.0, 3)
        v2 = potential_kernel(np.array([2.0, 0, 0]), 1.0, 3)
        assert v2 == pytest.approx(v1 * 2.0 ** (-2), rel=1e-12)

    def test_rejects_recurrent_range(self):
        with pytest.raises(ValueError):
            potential_kernel(np.array([1.0, 0.0]), 2.0, 2)


class TestBallGreen:
    def test_symmetry(self):
        x, y = np.array([0.2, 0.1]), np.array([-0.4, 0.3])
        assert ball_green(x, y, 1.0, 1.5, 2) == pytest.approx(
            ball_green(y, x, 1.0, 1.5, 2), rel=1e-14)

    def test_vanishes_monotonically_at_boundary(self):
        x = np.array([0.2, 0.0])
        vals = [float(ball_green(x, np.array([r, 0.0]), 1.0, 1.5, 2))
                for r in (0.55, 0.68, 0.8, 0.9, 0.97)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_scaling(self):
        x, y = np.array([0.2, 0.1]), np.array([-0.4, 0.3])
        big = ball_green(3 * x, 3 * y, 3.0, 1.5, 2)
        assert big == pytest.approx(3 ** (1.5 - 2) * ball_green(x, y, 1.0, 1.5, 2),
                                    rel=1e-12)

    def test_integral_equals_mean_exit(self):
        # occupation identity at quadrature accuracy
        x0 = np.array([0.3, 0.0])

        def f(r, th):
            y = np.array([r * np.cos(th), r * np.sin(th)])
            return float(ball_green(x0, y, 1.0, 1.5, 2)) * r

        val, err = integrate.dblquad(f, 0, 2 * np.pi, 0, 1, epsabs=1e-8)
        assert val == pytest.approx(ball_mean_exit(x0, 1.0, 1.5, 2), abs=1e-4)

    def test_interval_green_cauchy_closed_form(self):
        for x, y in [(0.3, -0.5), (0.0, 0.9), (-0.7, -0.6)]:
            expect = np.log((1 - x * y + np.sqrt((1 - x * x) * (1 - y * y)))
                            / abs(x - y)) / np.pi
            assert interval_green(x, y, -1, 1, 1.0) == pytest.approx(
                expect, rel=1e-10)

    def test_interval_green_quadrature_oracle(self):
        # independent evaluation of the incomplete integral for d=1, alpha>1
        from levygreen.stable import _green_kappa
        x, y, alpha = 0.2, -0.1, 1.5
        z = (1 - x * x) * (1 - y * y) / (x - y) ** 2
        integ, _ = integrate.quad(
            lambda u: u ** (alpha / 2 - 1) * (1 + u) ** (-0.5), 0, z, limit=400)
        expect = _green_kappa(alpha, 1) * abs(x - y) ** (alpha - 1) * integ
        assert interval_green(x, y, -1, 1, alpha) == pytest.approx(expect,
                                                                   rel=1e-9)

    def test_coincident_points_rejected(self):
        with pytest.raises(ValueError):
            ball_green(np.array([0.1, 0.0]), np.array([0.1, 0.0]), 1.0, 1.5, 2)

    def test_range_violations(self):
        with pytest.raises(ValueError):
            ball_green(np.array([0.1, 0.0]), np.array([0.2, 0.0]), 1.0, 2.5, 2)


class TestExitLaw:
    def test_direction_uniform_from_center(self, rng):
        z = ball_exit_sample(np.zeros(2), 1.0, 1.5, 2, rng, size=100000)
        th = np.arctan2(z[:, 1], z[:, 0])
        counts, _ = np.histogram(th, bins=16, range=(-np.pi, np.pi))
        assert chisquare(counts).pvalue > 0.01

    def test_radial_cdf_ks(self, rng):
        z = ball_exit_sample(np.zeros(1), 1.0, 1.2, 1, rng, size=100000)
        stat = kstest(np.abs(z[:, 0]),
                      lambda q: ball_exit_radial_cdf(q, 1.0, 1.2)).statistic
        assert stat < 0.005

    def test_off_center_matches_kernel(self, rng):
        # exit density along a thin annular sector vs the closed form
        x = np.array([0.4, 0.0])
        z = ball_exit_sample(x, 1.0, 1.5, 2, rng, size=200000)
        radii = np.linalg.norm(z, axis=1)
        sector = (radii > 1.05) & (radii < 1.35) & (np.abs(z[:, 1]) < 0.3) \
            & (z[:, 0] > 0)
        phat = sector.mean()
        se = np.sqrt(phat * (1 - phat) / len(z))

        def dens(zz):
            return ball_poisson_kernel(x, np.asarray(zz), 1.0, 1.5, 2)

        val, _ = integrate.dblquad(
            lambda r, th: float(dens([r * np.cos(th), r * np.sin(th)])) * r,
            -np.arcsin(0.3 / 1.05), np.arcsin(0.3 / 1.05), 1.05, 1.35,
            epsabs=1e-7)
        # clip the angular window to the |z_y| < 0.3 strip exactly
        assert phat == pytest.approx(val, abs=4 * se + 2e-3)

    def test_poisson_kernel_normalization(self):
        # no boundary mass: the kernel integrates to one (d=1, alpha>1)
        x = 0.3

        def f(z):
            return float(ball_poisson_kernel(np.array(x), np.array(z),
                                             1.0, 1.2, 1))

        lo, _ = integrate.quad(f, -np.inf, -1.0, limit=400)
        hi, _ = integrate.quad(f, 1.0, np.inf, limit=400)
        assert lo + hi == pytest.approx(1.0, abs=1e-6)

    def test_mean_exit_cauchy(self):
        assert ball_mean_exit(np.zeros(1), 1.0, 1.0, 1) == pytest.approx(1.0)
        assert ball_mean_exit(np.array([0.6]), 1.0, 1.0, 1) == pytest.approx(0.8)


class TestPhiProfile:
    def test_capped_at_anchor(self, disk):
        phi = PhiProfile(disk, 1.5)
        cap = stable_constant(1.5, 2) * disk.r0 ** (1.5 - 2)
        assert phi(phi.refp.x0) == pytest.approx(cap)

    def test_boundary_decay(self, disk):
        phi = PhiProfile(disk, 1.5)
        vals = [phi(np.array([r, 0.0])) for r in (0.8, 0.85, 0.9, 0.95, 0.99)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert all(v <= phi.cap + 1e-12 for v in vals)

    def test_matches_green_below_cap(self, disk):
        phi = PhiProfile(disk, 1.5)
        x = np.array([0.9, 0.0])
        g = float(ball_green(x, phi.refp.x0, 1.0, 1.5, 2))
        assert g < phi.cap
        assert phi(x) == pytest.approx(g, rel=1e-12)


class TestGreenEnvelope:
    def test_one_dim_min_branch(self, interval):
        env = green_envelope(interval, 1.5)
        x, y = np.array([0.9]), np.array([0.7])
        dd = interval.dist_to_boundary(x) * interval.dist_to_boundary(y)
        dist = 0.2
        assert dd <= dist ** 2
        assert env.expression(x, y) == pytest.approx(dd ** 0.75 / dist)

    def test_one_dim_log_branch_rejects_diagonal(self, interval):
        env = green_envelope(interval, 1.0)
        with pytest.raises(ValueError):
            env.expression(np.array([0.0]), np.array([0.0]))

    def test_profile_envelope_brackets_ball_green(self, disk, rng):
        env = green_envelope(disk, 1.5)
        ratios = []
        for _ in range(20):
            x = rng.uniform(-0.7, 0.7, 2)
            y = rng.uniform(-0.7, 0.7, 2)
            if not (disk.contains(x) and disk.contains(y)):
                continue
            if np.linalg.norm(x - y) < 0.05:
                continue
            g = float(ball_green(x, y, 1.0, 1.5, 2))
            ratios.append(g / env.expression(x, y))
        ratios = np.asarray(ratios)
        band = ratios.max() / ratios.min()
        print(f"envelope band width on the disk: {band:.2f}")
        assert band < 50.0

    def test_lower_not_above_upper(self, disk, rng):
        env = green_envelope(disk, 1.5)
        for _ in range(10):
            x = rng.uniform(-0.6, 0.6, 2)
            y = rng.uniform(-0.6, 0.6, 2)
            if np.linalg.norm(x - y) < 0.05:
                continue
            assert env.lower(x, y) <= env.upper(x, y) + 1e-15
            assert env.constant_free
