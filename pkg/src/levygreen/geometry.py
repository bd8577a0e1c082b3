"""Bounded Lipschitz domains and the geometric quantities the estimators need.

Supported shapes: open intervals, balls in any dimension, axis-aligned
boxes, and simple 2D polygons.  Every domain carries a user-supplied
Lipschitz character ``(r0, lam)``: the localization radius and the
Lipschitz constant of the boundary graph.  Sensible defaults are filled
in for the analytic shapes (ball: r0 = radius, lam = 1; interval/box:
r0 = half of the shortest side, lam = 1); polygons require explicit
values.

Domains are immutable after construction and safe to share across
worker threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

try:
    import shapely
    from shapely.geometry import Point as _ShPoint, Polygon as _ShPolygon
except ImportError:  # pragma: no cover
    shapely = None


class GeometrySearchError(RuntimeError):
    """Deterministic geometric search found no admissible point."""


def _as_points(x, dim):
    """Coerce to an (n, dim) float array; returns (array, was_single)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and dim == 1 and a.shape[0] != 1:
        return a[:, None], False
    if a.ndim <= 1:
        return a.reshape(1, dim), True
    return a, False


class Domain:
    """Base class; concrete shapes implement the geometric queries."""

    # -- queries implemented by subclasses ------------------------------
    def contains(self, x):
        """True iff x lies in the open set (vectorized over rows)."""
        raise NotImplementedError

    def dist_to_boundary(self, x):
        """Distance to the boundary, for interior and exterior points."""
        raise NotImplementedError

    @property
    def dim(self):
        raise NotImplementedError

    @property
    def diam(self):
        raise NotImplementedError

    def bounding_box(self):
        """(lo, hi) arrays of the axis-aligned bounding box."""
        raise NotImplementedError

    # -- derived quantities ---------------------------------------------
    @property
    def kappa(self):
        return 1.0 / (2.0 * np.sqrt(1.0 + self.lam ** 2))

    @property
    def r0_relative(self):
        return self.r0 / self.diam

    def _validate_char(self):
        if not (self.r0 > 0):
            raise ValueError("r0 must be positive")
        if not (self.r0 <= self.diam * (1 + 1e-12)):
            raise ValueError("r0 must not exceed the diameter")
        if not (self.lam > 0):
            raise ValueError("lam must be positive")

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        raise NotImplementedError

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class Interval(Domain):
    """Open interval (a, b) on the line."""

    a: float = -1.0
    b: float = 1.0
    r0: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("need b > a")
        if self.r0 == 0.0:
            object.__setattr__(self, "r0", 0.5 * (self.b - self.a))
        self._validate_char()

    @property
    def dim(self):
        return 1

    @property
    def diam(self):
        return self.b - self.a

    def contains(self, x):
        p, single = _as_points(x, 1)
        out = (p[:, 0] > self.a) & (p[:, 0] < self.b)
        return bool(out[0]) if single else out

    def dist_to_boundary(self, x):
        p, single = _as_points(x, 1)
        t = p[:, 0]
        inside = (t > self.a) & (t < self.b)
        d = np.where(inside, np.minimum(t - self.a, self.b - t),
                     np.maximum(self.a - t, t - self.b))
        return float(d[0]) if single else d

    def bounding_box(self):
        return np.array([self.a]), np.array([self.b])

    def to_dict(self):
        return {"shape": "interval", "a": self.a, "b": self.b,
                "r0": self.r0, "lambda": self.lam}


@dataclass(frozen=True)
class Ball(Domain):
    """Open ball B(center, radius) in R^d."""

    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    r0: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.r0 == 0.0:
            object.__setattr__(self, "r0", self.radius)
        self._validate_char()

    @property
    def dim(self):
        return len(self.center)

    @property
    def diam(self):
        return 2.0 * self.radius

    def _c(self):
        return np.asarray(self.center)

    def contains(self, x):
        p, single = _as_points(x, self.dim)
        out = ((p - self._c()) ** 2).sum(axis=1) < self.radius ** 2
        return bool(out[0]) if single else out

    def dist_to_boundary(self, x):
        p, single = _as_points(x, self.dim)
        d = np.abs(self.radius - np.linalg.norm(p - self._c(), axis=1))
        return float(d[0]) if single else d

    def bounding_box(self):
        c = self._c()
        return c - self.radius, c + self.radius

    def to_dict(self):
        return {"shape": "ball", "center": list(self.center),
                "radius": self.radius, "r0": self.r0, "lambda": self.lam}


@dataclass(frozen=True)
class Box(Domain):
    """Open axis-aligned box prod_i (lo_i, hi_i)."""

    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)
    r0: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or not np.all(hi > lo):
            raise ValueError("need hi > lo componentwise")
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))
        if self.r0 == 0.0:
            object.__setattr__(self, "r0", 0.5 * float(np.min(hi - lo)))
        self._validate_char()

    @property
    def dim(self):
        return len(self.lo)

    @property
    def diam(self):
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))

    def contains(self, x):
        p, single = _as_points(x, self.dim)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        out = np.all((p > lo) & (p < hi), axis=1)
        return bool(out[0]) if single else out

    def dist_to_boundary(self, x):
        p, single = _as_points(x, self.dim)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        inside_margin = np.minimum(p - lo, hi - p).min(axis=1)
        outside = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        dist_out = np.linalg.norm(outside, axis=1)
        d = np.where(inside_margin > 0, inside_margin, dist_out)
        return float(d[0]) if single else d

    def bounding_box(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def to_dict(self):
        return {"shape": "box", "lo": list(self.lo), "hi": list(self.hi),
                "r0": self.r0, "lambda": self.lam}


@dataclass(frozen=True)
class Polygon(Domain):
    """Simple (non self-intersecting) open polygon in the plane."""

    vertices: tuple = ()
    r0: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ValueError("polygon needs >= 3 vertices in 2D")
        poly = _ShPolygon(v)
        if not poly.is_valid or poly.area <= 0:
            raise ValueError("polygon must be simple and non-degenerate")
        object.__setattr__(self, "vertices", tuple(map(tuple, v)))
        if self.r0 == 0.0:
            raise ValueError("polygon domains require an explicit r0")
        self._validate_char()

    @property
    def _poly(self):
        # shapely geometries are immutable; rebuild lazily and memoize
        p = self.__dict__.get("_poly_cache")
        if p is None:
            p = _ShPolygon(np.asarray(self.vertices))
            self.__dict__["_poly_cache"] = p
        return p

    @property
    def dim(self):
        return 2

    @property
    def diam(self):
        v = np.asarray(self.vertices)
        d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    def contains(self, x):
        p, single = _as_points(x, 2)
        out = shapely.contains_xy(self._poly, p[:, 0], p[:, 1])
        return bool(out[0]) if single else out

    def dist_to_boundary(self, x):
        p, single = _as_points(x, 2)
        pts = shapely.points(p)
        d = shapely.distance(self._poly.exterior, pts)
        return float(d[0]) if single else np.asarray(d)

    def bounding_box(self):
        v = np.asarray(self.vertices)
        return v.min(axis=0), v.max(axis=0)

    def to_dict(self):
        return {"shape": "polygon", "vertices": [list(v) for v in self.vertices],
                "r0": self.r0, "lambda": self.lam}


def domain_from_dict(obj):
    """Inverse of Domain.to_dict; accepts parsed JSON."""
    shape = obj.get("shape")
    r0 = float(obj.get("r0", 0.0))
    lam = float(obj.get("lambda", 1.0))
    if shape == "interval":
        return Interval(a=float(obj["a"]), b=float(obj["b"]), r0=r0, lam=lam)
    if shape == "ball":
        return Ball(center=tuple(obj["center"]), radius=float(obj["radius"]), r0=r0, lam=lam)
    if shape == "box":
        return Box(lo=tuple(obj["lo"]), hi=tuple(obj["hi"]), r0=r0, lam=lam)
    if shape == "polygon":
        return Polygon(vertices=tuple(map(tuple, obj["vertices"])), r0=r0, lam=lam)
    raise ValueError(f"unknown shape {shape!r}")


def domain_from_json(text):
    return domain_from_dict(json.loads(text))


@dataclass(frozen=True)
class ReferencePoints:
    """Deep interior anchor x0 and its companion x1 at distance r0/4."""

    x0: np.ndarray
    x1: np.ndarray


def reference_points(domain, grid_n=41):
    """Pick the reference pair (x0, x1) of a domain.

    x0 is the grid argmax of the boundary distance over a grid_n^d lattice
    on the bounding box (lexicographically smallest among ties), x1 sits
    at distance r0/4 from x0 along the first coordinate axis that stays
    inside the domain.  Raises GeometrySearchError when no grid point has
    boundary distance >= r0/2, which signals an inconsistent r0.
    """
    lo, hi = domain.bounding_box()
    axes = [np.linspace(lo[i], hi[i], grid_n) for i in range(domain.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    inside = domain.contains(pts)
    if not inside.any():
        raise GeometrySearchError("no grid point inside the domain")
    pts = pts[inside]
    delta = domain.dist_to_boundary(pts)
    best = delta.max()
    if best < domain.r0 / 2:
        raise GeometrySearchError(
            f"no point with boundary distance >= r0/2 = {domain.r0 / 2:g} "
            f"found (max {best:g}); r0 is inconsistent with the shape")
    ties = np.flatnonzero(delta >= best - 1e-12)
    order = np.lexsort(pts[ties].T[::-1])  # lexicographic by coordinates
    x0 = pts[ties[order[0]]]
    step = domain.r0 / 4
    for axis in range(domain.dim):
        for sign in (+1.0, -1.0):
            x1 = x0.copy()
            x1[axis] += sign * step
            if domain.contains(x1):
                return ReferencePoints(x0=x0, x1=x1)
    raise GeometrySearchError("no admissible companion point x1")


def interpolation_point(domain, x, y, refp=None):
    """Interior interpolation point A for the pair (x, y).

    Let r = max(delta(x), delta(y), |x-y|).  For r > r0/32 the fixed
    anchor x1 is returned.  Otherwise the segment from the midpoint of
    (x, y) toward x0 is scanned in steps of kappa*r/4 and the first point
    A with

        B(A, kappa*r)  inside  D  and  B(x, 3r)  and  B(y, 3r)

    is returned (the inclusion in D is the exact test delta(A) >= kappa*r).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not (domain.contains(x) and domain.contains(y)):
        raise ValueError("x and y must lie in the domain")
    if refp is None:
        refp = reference_points(domain)
    r = max(domain.dist_to_boundary(x), domain.dist_to_boundary(y),
            float(np.linalg.norm(x - y)))
    if r > domain.r0 / 32:
        return np.asarray(refp.x1, dtype=float)
    kap = domain.kappa
    mid = 0.5 * (x + y)
    direction = refp.x0 - mid
    span = float(np.linalg.norm(direction))
    if span > 0:
        direction = direction / span
    step = kap * r / 4
    n_steps = int(span / step) + 2 if span > 0 else 1
    for k in range(n_steps):
        a = mid + min(k * step, span) * direction
        if not domain.contains(a):
            continue
        if domain.dist_to_boundary(a) < kap * r:
            continue
        if np.linalg.norm(a - x) + kap * r <= 3 * r and np.linalg.norm(a - y) + kap * r <= 3 * r:
            return a
    raise GeometrySearchError(
        "no admissible interpolation point; geometry bug or wrong (r0, lambda)")
