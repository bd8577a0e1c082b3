import json

import numpy as np
import pytest

from levygreen.geometry import (Ball, Box, GeometrySearchError, Interval,
                                Polygon, domain_from_json, interpolation_point,
                                reference_points)


def boundary_distance_oracle(domain, x, n_coarse=20000):
    """Nearest-boundary distance by dense boundary sampling plus local
    golden-section refinement (independent of the analytic formulas)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(domain, Interval):
        return min(abs(x[0] - domain.a), abs(x[0] - domain.b))
    if isinstance(domain, Ball):
        th = np.linspace(0, 2 * np.pi, n_coarse, endpoint=False)
        c = np.asarray(domain.center)
        pts = c + domain.radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    elif isinstance(domain, Box):
        lo, hi = domain.bounding_box()
        corners = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
        best = np.inf
        for k in range(4):
            a = np.asarray(corners[k])
            bpt = np.asarray(corners[(k + 1) % 4])
            t = np.clip((x - a) @ (bpt - a) / ((bpt - a) @ (bpt - a)), 0, 1)
            best = min(best, float(np.linalg.norm(a + t * (bpt - a) - x)))
        return best
    else:
        raise NotImplementedError
    d = np.linalg.norm(pts - x[None, :], axis=1)
    i = int(np.argmin(d))
    # golden-section refine around the best boundary point
    if isinstance(domain, Ball):
        th_lo, th_hi = th[i] - 2 * np.pi / n_coarse, th[i] + 2 * np.pi / n_coarse
        f = lambda a: np.linalg.norm(c + domain.radius * np.array([np.cos(a), np.sin(a)]) - x)
        for _ in range(200):
            m1 = th_lo + 0.382 * (th_hi - th_lo)
            m2 = th_lo + 0.618 * (th_hi - th_lo)
            if f(m1) < f(m2):
                th_hi = m2
            else:
                th_lo = m1
        return f(0.5 * (th_lo + th_hi))
    return float(d[i])


class TestContains:
    def test_ball_interior(self, disk):
        assert disk.contains((0.5, 0.0))

    def test_ball_boundary_excluded(self, disk):
        assert not disk.contains((1.0, 0.0))

    def test_interval_outside(self, interval):
        assert not interval.contains(-1.0000001)

    def test_vectorized(self, disk):
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.9, 0.0]])
        assert list(disk.contains(pts)) == [True, False, True]


class TestBoundaryDistance:
    def test_ball(self, disk):
        assert disk.dist_to_boundary((0.25, 0.0)) == pytest.approx(0.75)

    def test_interval_center(self, interval):
        assert interval.dist_to_boundary(0.0) == pytest.approx(1.0)

    def test_square_nearest_edge(self, square):
        assert square.dist_to_boundary((0.1, 0.4)) == pytest.approx(0.1)

    def test_exterior_points(self, disk, interval):
        assert disk.dist_to_boundary((2.0, 0.0)) == pytest.approx(1.0)
        assert interval.dist_to_boundary(1.5) == pytest.approx(0.5)

    @pytest.mark.parametrize("shape,x", [
        ("ball", (0.3, -0.4)), ("ball", (1.7, 0.2)),
        ("box", (0.2, 0.85)), ("interval", (0.37,)),
    ])
    def test_matches_sampling_oracle(self, shape, x, disk, square, interval):
        dom = {"ball": disk, "box": square, "interval": interval}[shape]
        x = np.asarray(x)
        assert dom.dist_to_boundary(x) == pytest.approx(
            boundary_distance_oracle(dom, x), abs=1e-9)

    def test_triangle_property(self, disk, rng):
        pts = rng.uniform(-0.9, 0.9, size=(200, 2))
        pts = pts[disk.contains(pts)]
        for i in range(0, len(pts) - 1, 2):
            x, y = pts[i], pts[i + 1]
            dx = disk.dist_to_boundary(x)
            dy = disk.dist_to_boundary(y)
            assert dx + np.linalg.norm(x - y) >= dy - 1e-12


class TestDiameter:
    @pytest.mark.parametrize("name", ["ball", "box", "interval"])
    def test_supremum_over_random_pairs(self, name, disk, square, interval, rng):
        dom = {"ball": disk, "box": square, "interval": interval}[name]
        lo, hi = dom.bounding_box()
        pts = rng.uniform(lo, hi, size=(30000, dom.dim))
        pts = pts[dom.contains(pts)][:10000]
        if dom.dim == 1:
            best = float(pts.max() - pts.min())
        else:
            from scipy.spatial import ConvexHull
            hull = pts[ConvexHull(pts).vertices]
            d2 = ((hull[:, None, :] - hull[None, :, :]) ** 2).sum(-1)
            best = float(np.sqrt(d2.max()))
        assert best <= dom.diam + 1e-12
        assert best >= 0.98 * dom.diam

    def test_invariants(self, disk):
        assert disk.diam > 0
        assert 0 < disk.r0 <= disk.diam


class TestReferencePoints:
    def test_ball_center(self, disk):
        rp = reference_points(disk)
        assert np.allclose(rp.x0, [0.0, 0.0])
        assert np.linalg.norm(rp.x0 - rp.x1) == pytest.approx(disk.r0 / 4,
                                                              abs=1e-12)

    def test_interval(self):
        iv = Interval(-1.0, 1.0)  # default r0 = 1
        rp = reference_points(iv)
        assert rp.x0[0] == pytest.approx(0.0)
        assert abs(rp.x1[0]) == pytest.approx(0.25)

    def test_square_grid_argmax(self):
        sq = Box(lo=(0.0, 0.0), hi=(1.0, 1.0))  # default r0 = 0.5
        rp = reference_points(sq)
        assert np.allclose(rp.x0, [0.5, 0.5])
        assert sq.dist_to_boundary(rp.x0) >= sq.r0 / 2

    def test_inconsistent_r0_raises(self):
        sq = Box(lo=(0.0, 0.0), hi=(1.0, 1.0), r0=3.0 / 2.2, lam=1.0)
        with pytest.raises(GeometrySearchError):
            reference_points(sq)


class TestInterpolationPoint:
    def test_large_r_branch_returns_x1(self, disk):
        rp = reference_points(disk)
        a = interpolation_point(disk, rp.x0, rp.x0, refp=rp)
        assert np.allclose(a, rp.x1)

    def test_separated_pair_returns_x1(self, disk):
        rp = reference_points(disk)
        a = interpolation_point(disk, np.array([-0.5, 0.0]),
                                np.array([0.5, 0.0]), refp=rp)
        assert np.allclose(a, rp.x1)

    @pytest.mark.parametrize("dom_name,x,y", [
        ("interval", (-0.999,), (-0.998,)),
        ("disk", (0.985, 0.0), (0.98, 0.01)),
        ("square", (0.005, 0.4), (0.006, 0.41)),
    ])
    def test_ball_inclusion_oracle(self, dom_name, x, y, disk, interval,
                                   square, rng):
        dom = {"disk": disk, "interval": interval, "square": square}[dom_name]
        x, y = np.asarray(x, float), np.asarray(y, float)
        rp = reference_points(dom)
        r = max(dom.dist_to_boundary(x), dom.dist_to_boundary(y),
                np.linalg.norm(x - y))
        assert r <= dom.r0 / 32, "test pair must trigger the small-r branch"
        a = interpolation_point(dom, x, y, refp=rp)
        kap = dom.kappa
        if dom.dim == 1:
            samples = a + kap * r * rng.uniform(-1, 1, size=(1000, 1))
        else:
            v = rng.standard_normal((1000, 2))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            samples = a + kap * r * np.sqrt(rng.uniform(size=(1000, 1))) * v
        assert dom.contains(samples).all()
        assert (np.linalg.norm(samples - x, axis=1) < 3 * r).all()
        assert (np.linalg.norm(samples - y, axis=1) < 3 * r).all()


class TestPolygon:
    def test_l_shape(self):
        L = Polygon(vertices=((0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)),
                    r0=0.4)
        assert L.contains((0.5, 0.5))
        assert not L.contains((1.5, 1.5))
        assert L.dist_to_boundary((0.5, 0.5)) == pytest.approx(0.5)
        rp = reference_points(L)
        assert L.dist_to_boundary(rp.x0) >= L.r0 / 2

    def test_requires_r0(self):
        with pytest.raises(ValueError):
            Polygon(vertices=((0, 0), (1, 0), (0, 1)))

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Polygon(vertices=((0, 0), (1, 1), (2, 2)), r0=0.1)


class TestSerialization:
    @pytest.mark.parametrize("dom", [
        Ball(center=(0.5, -0.5), radius=2.0),
        Interval(-2.0, 3.0),
        Box(lo=(0.0, 1.0), hi=(2.0, 4.0)),
        Polygon(vertices=((0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)),
                r0=0.4, lam=2.0),
    ])
    def test_round_trip(self, dom):
        back = domain_from_json(dom.to_json())
        assert back == dom
        obj = json.loads(dom.to_json())
        assert obj["shape"] in ("ball", "box", "interval", "polygon")
        assert "r0" in obj and "lambda" in obj
