"""Exact and controlled-bias samplers for increments and path skeletons.

Increments of the stable and relativistic processes are sampled exactly
(transform sampler in one dimension, subordinated Gaussian vectors in
general, tempered-subordinator rejection for the relativistic kind).
Truncated and custom perturbations have no exact sampler; their paths
are produced by dominating the jump measure with nu_stable v nu, thinning
each jump, and replacing the sub-threshold jump activity by a Brownian
substitute of matching variance on a regular time grid.  Every sampler
is a pure function of its inputs and the generator state, so a fixed
seed reproduces paths bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stable import sphere_surface, stable_constant

__all__ = [
    "PathSkeleton", "CouplingSample", "JumpDensity",
    "sym_stable_rv", "one_sided_stable_rv",
    "sample_stable_increment", "sample_relativistic_increment",
    "sample_compound_poisson", "sample_perturbed_path", "sample_coupled",
    "increment_sampler", "small_jump_variance", "stable_tail_intensity",
]


# ---------------------------------------------------------------------------
# scalar building blocks
# ---------------------------------------------------------------------------

def sym_stable_rv(alpha, rng, size=None):
    """Standard symmetric stable variates (char. function e^{-|z|^alpha})."""
    v = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.standard_exponential(size)
    if abs(alpha - 1.0) < 1e-12:
        return np.tan(v)
    return (np.sin(alpha * v) / np.cos(v) ** (1 / alpha)
            * (np.cos((1 - alpha) * v) / w) ** ((1 - alpha) / alpha))


def one_sided_stable_rv(beta, rng, size=None):
    """Positive stable variates with Laplace transform e^{-lambda^beta}."""
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    u = rng.uniform(0.0, np.pi, size)
    e = rng.standard_exponential(size)
    a = (np.sin(beta * u) ** beta * np.sin((1 - beta) * u) ** (1 - beta)
         / np.sin(u)) ** (1 / (1 - beta))
    return (a / e) ** ((1 - beta) / beta)


def _sphere(n, d, rng):
    if d == 1:
        return rng.choice([-1.0, 1.0], size=(n, 1))
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_stable_increment(t, rng, alpha, d, size=None):
    """Exact increment(s) of the isotropic stable process over time t.

    d = 1 uses the transform sampler; d >= 2 subordinates a Gaussian
    vector with an (alpha/2)-stable time change (variance 2S so that the
    characteristic function is e^{-t|z|^alpha}).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    n = 1 if size is None else int(size)
    if d == 1:
        out = t ** (1 / alpha) * sym_stable_rv(alpha, rng, n)[:, None]
    else:
        s = t ** (2 / alpha) * one_sided_stable_rv(alpha / 2, rng, n)
        out = np.sqrt(2 * s)[:, None] * rng.standard_normal((n, d))
    return out[0] if size is None else out


def sample_relativistic_increment(t, rng, alpha, m, d, size=None):
    """Exact relativistic increment(s) via tempered-subordinator rejection.

    A stable subordinator draw S at time t is accepted with probability
    e^{-m^{2/alpha} S} (overall acceptance e^{-tm}); the returned vector
    is Gaussian with variance 2S per axis, so m = 0 recovers the stable
    law.  Steps with t*m > 1 are split into sub-increments to keep the
    acceptance rate above e^{-1}.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if m == 0:
        return sample_stable_increment(t, rng, alpha, d, size)
    n = 1 if size is None else int(size)
    k = max(1, int(np.ceil(t * m)))
    theta = m ** (2.0 / alpha)
    ts = t / k
    total = np.zeros((n, d))
    for _ in range(k):
        s_acc = np.empty(n)
        need = np.arange(n)
        while need.size:
            s = ts ** (2 / alpha) * one_sided_stable_rv(alpha / 2, rng, need.size)
            acc = rng.uniform(size=need.size) < np.exp(-theta * s)
            s_acc[need[acc]] = s[acc]
            need = need[~acc]
        total += np.sqrt(2 * s_acc)[:, None] * rng.standard_normal((n, d))
    return total[0] if size is None else total


# ---------------------------------------------------------------------------
# finite jump measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpDensity:
    """Nonnegative finite isotropic jump density with a sampling envelope.

    density(r) is the radial density; the envelope is piecewise
    c_in * r^{rho-d} on (0, 1] and a constant bound on (1, support].
    Draws are rejection samples against the envelope; a density value
    above its envelope means the measure was misdeclared and raises.
    """

    density: callable
    mass: float
    d: int
    c_in: float
    rho: float
    support: float
    c_out: float = 0.0

    def _envelope(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 1.0, self.c_in * r ** (self.rho - self.d),
                        np.where(r <= self.support, self.c_out, 0.0))

    def _envelope_masses(self):
        sd = sphere_surface(self.d)
        inner = sd * self.c_in / self.rho * min(1.0, self.support) ** self.rho
        outer = 0.0
        if self.support > 1.0:
            outer = self.c_out * sd * (self.support ** self.d - 1.0) / self.d
        return inner, outer

    def sample(self, rng, size):
        """size jump vectors distributed as density/mass."""
        inner, outer = self._envelope_masses()
        total = inner + outer
        out = np.empty((size, self.d))
        need = np.arange(size)
        sd = sphere_surface(self.d)
        while need.size:
            n = need.size
            pick_inner = rng.uniform(size=n) < inner / total
            r = np.empty(n)
            u = rng.uniform(size=n)
            lim = min(1.0, self.support)
            # inverse CDF of the radial envelope pieces
            r[pick_inner] = lim * u[pick_inner] ** (1.0 / self.rho)
            if (~pick_inner).any():
                v = u[~pick_inner]
                r[~pick_inner] = (1.0 + v * (self.support ** self.d - 1.0)) ** (1.0 / self.d)
            dens = np.asarray(self.density(r), dtype=float)
            env = self._envelope(r)
            if np.any(dens > env * (1 + 1e-9)):
                bad = r[dens > env * (1 + 1e-9)][0]
                raise RuntimeError(
                    f"jump density exceeds its declared envelope at r={bad:g}")
            acc = rng.uniform(size=n) * env < dens
            took = need[acc]
            out[took] = r[acc, None] * _sphere(acc.sum(), self.d, rng)
            need = need[~acc]
        return out


def sample_compound_poisson(jump_density, t, rng):
    """Jumps of a compound Poisson process on [0, t].

    Returns (times, jumps) with times sorted increasing; the count is
    Poisson(mass * t), times are uniform, vectors are drawn from
    density/mass by envelope rejection.
    """
    n = rng.poisson(jump_density.mass * t)
    times = np.sort(rng.uniform(0.0, t, n))
    jumps = jump_density.sample(rng, n) if n else np.empty((0, jump_density.d))
    return times, jumps


# ---------------------------------------------------------------------------
# dominating-measure path construction
# ---------------------------------------------------------------------------

def stable_tail_intensity(eps, alpha, d):
    """Total mass of the stable Levy density beyond radius eps."""
    return stable_constant(-alpha, d) * sphere_surface(d) / alpha * eps ** (-alpha)


def small_jump_variance(model, eps):
    """Per-axis variance rate of the sub-eps jump activity of nu v nu_stable.

    The dominating measure below eps coincides with the stable density
    (finite extra parts add nothing there for the built-in kinds; custom
    extra parts below eps are included by quadrature).
    """
    from scipy import integrate
    a, d = model.alpha, model.d
    base = (stable_constant(-a, d) * sphere_surface(d)
            * eps ** (2 - a) / (2 - a)) / d
    extra = 0.0
    if model.kind == "custom":
        def f(r):
            return np.clip(-model.sigma(r), 0.0, None) * r ** (d + 1)
        val, _ = integrate.quad(f, 0, min(eps, model.sigma_support), limit=200)
        extra = sphere_surface(d) * val / d
    return base + extra


def _dominating_parts(model):
    """Split nu_Z = nu v nu_stable into the stable part plus a finite part.

    Returns (extra: JumpDensity or None, thin: callable r -> nu(r)/nu_Z(r)).
    """
    if model.kind == "stable":
        return None, None
    if model.kind == "truncated":
        return None, lambda r: (r < model.cutoff).astype(float)
    if model.kind == "relativistic":
        def thin(r):
            return model.levy_density_radial(r) / model.stable_density_radial(r)
        return None, thin
    # custom: extra finite part is (nu - nu_stable)_+ = max(-sigma, 0)
    stats = model.sigma_stats()

    def extra_density(r):
        return np.clip(-model.sigma(r), 0.0, None)

    sd = sphere_surface(model.d)
    from scipy import integrate
    mass, _ = integrate.quad(lambda r: extra_density(r) * r ** (model.d - 1),
                             0, model.sigma_support, limit=400)
    mass *= sd
    extra = None
    if mass > 0:
        extra = JumpDensity(density=extra_density, mass=mass, d=model.d,
                            c_in=stats.c, rho=stats.rho, support=model.sigma_support,
                            c_out=stats.c + float(np.max(np.abs(model.sigma(
                                np.linspace(1.0, max(model.sigma_support, 1.0 + 1e-9), 64))))))

    def thin(r):
        nu_z = model.stable_density_radial(r) + extra_density(r)
        return model.levy_density_radial(r) / nu_z

    return extra, thin


def _stable_tail_jumps(horizon, eps, alpha, d, rng):
    """Jumps of magnitude >= eps of the stable Levy measure on [0, horizon],
    generated by the decreasing-magnitude series representation."""
    coef = stable_constant(-alpha, d) * sphere_surface(d) / alpha
    radii = []
    g = 0.0
    while True:
        g += rng.standard_exponential()
        r = (g / (coef * horizon)) ** (-1.0 / alpha)
        if r < eps:
            break
        radii.append(r)
    n = len(radii)
    times = rng.uniform(0.0, horizon, n)
    vecs = np.asarray(radii)[:, None] * _sphere(n, d, rng) if n else np.empty((0, d))
    return times, vecs


@dataclass
class PathSkeleton:
    """Time-stamped positions of one simulated path."""

    times: np.ndarray
    positions: np.ndarray
    horizon: float
    exited: bool = False
    exit_index: int = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.times.ndim != 1 or len(self.times) != len(self.positions):
            raise ValueError("times and positions must have matching length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.exited and not (0 <= self.exit_index < len(self.times)):
            raise ValueError("exit_index out of range")

    @property
    def exit_time(self):
        return float(self.times[self.exit_index]) if self.exited else None

    @property
    def exit_position(self):
        return self.positions[self.exit_index] if self.exited else None

    def to_csv(self, path):
        d = self.positions.shape[1]
        header = "t," + ",".join(f"x{i}" for i in range(d)) + ",exited"
        flags = np.zeros(len(self.times))
        if self.exited:
            flags[self.exit_index:] = 1
        data = np.column_stack([self.times, self.positions, flags])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.12g")


def sample_perturbed_path(model, x, horizon, eps, dt, rng, domain=None):
    """Skeleton of the process on [0, horizon] by dominate-then-thin.

    Jumps >= eps of the dominating density nu v nu_stable come from the
    decreasing series (stable part) plus a compound Poisson stream for
    the finite excess part; each jump w is kept with probability
    nu(w)/nu_Z(w).  Jumps below eps become a Brownian substitute of
    matching variance on the dt grid.  The skeleton records all grid and
    jump times; when a domain is given, exit is detected at those times
    only (late detection, so exit times are biased upward; halve dt to
    quantify).
    """
    if eps <= 0 or dt <= 0:
        raise ValueError("eps and dt must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d, alpha = model.d, model.alpha
    var_rate = small_jump_variance(model, eps)
    if domain is not None and var_rate * dt > 1e-4 * domain.diam ** 2:
        import warnings
        warnings.warn("eps is large for this domain scale; substitute variance "
                      f"{var_rate * dt:g} per step", stacklevel=2)

    jt, jv = _stable_tail_jumps(horizon, eps, alpha, d, rng)
    extra, thin = _dominating_parts(model)
    if extra is not None:
        et, ev = sample_compound_poisson(extra, horizon, rng)
        keep_e = np.linalg.norm(ev, axis=1) >= eps if len(ev) else np.zeros(0, bool)
        jt = np.concatenate([jt, et[keep_e]])
        jv = np.concatenate([jv, ev[keep_e]]) if len(ev) else jv
    if thin is not None and len(jt):
        radii = np.linalg.norm(jv, axis=1)
        keep = rng.uniform(size=len(jt)) < thin(radii)
        jt, jv = jt[keep], jv[keep]

    grid = np.arange(dt, horizon + dt / 2, dt)
    events = np.concatenate([grid, jt])
    kinds = np.concatenate([np.full(len(grid), -1, dtype=int), np.arange(len(jt))])
    order = np.argsort(events, kind="stable")
    events, kinds = events[order], kinds[order]

    times = [0.0]
    positions = [x.copy()]
    pos = x.copy()
    t_prev = 0.0
    exited = False
    exit_index = None
    for ev, kd in zip(events, kinds):
        gap = ev - t_prev
        if gap > 0:
            pos = pos + np.sqrt(var_rate * gap) * rng.standard_normal(d)
        if kd >= 0:
            pos = pos + jv[kd]
        t_prev = ev
        times.append(ev)
        positions.append(pos.copy())
        if domain is not None and not exited and not domain.contains(pos):
            exited = True
            exit_index = len(times) - 1
            break
    return PathSkeleton(times=np.asarray(times), positions=np.asarray(positions),
                        horizon=horizon, exited=exited, exit_index=exit_index)


@dataclass
class CouplingSample:
    """Joint realization (X, Z = X + V) sharing one X path."""

    path_x: PathSkeleton
    path_z: PathSkeleton
    first_jump: float            # first jump time of V (inf when V has no jumps)
    jumps: list                  # list of (time, vector)


def sample_coupled(model_x, sigma_part, x, horizon, rng, dt=0.01, eps=1e-3):
    """Couple X with Z = X + V, V an independent compound Poisson process.

    sigma_part is a JumpDensity (a nonnegative part of the perturbation);
    the two skeletons share the X realization and coincide before the
    first V jump.  A zero-mass part yields Z identical to X with the
    first jump time reported as infinity.
    """
    path_x = sample_perturbed_path(model_x, x, horizon, eps, dt, rng)
    if sigma_part is None or sigma_part.mass == 0:
        return CouplingSample(path_x=path_x, path_z=path_x,
                              first_jump=np.inf, jumps=[])
    vt, vv = sample_compound_poisson(sigma_part, horizon, rng)
    t_all = np.unique(np.concatenate([path_x.times, vt]))
    d = path_x.positions.shape[1]
    # X positions at merged times (piecewise constant from the skeleton
    # would be wrong for the Brownian substitute, so interpolate the
    # recorded nodes; V only changes at its own jump times)
    xk = np.vstack([np.interp(t_all, path_x.times, path_x.positions[:, i])
                    for i in range(d)]).T
    vrun = np.zeros((len(t_all), d))
    for ti, vi in zip(vt, vv):
        vrun[t_all >= ti] += vi
    path_z = PathSkeleton(times=t_all, positions=xk + vrun, horizon=horizon)
    first = float(vt[0]) if len(vt) else np.inf
    return CouplingSample(path_x=PathSkeleton(times=t_all, positions=xk, horizon=horizon),
                          path_z=path_z, first_jump=first,
                          jumps=list(zip(vt.tolist(), list(vv))))


# ---------------------------------------------------------------------------
# vectorized stepping for the estimators
# ---------------------------------------------------------------------------

def increment_sampler(model, eps=None):
    """Vectorized one-step increment sampler: f(dt, n, rng) -> (n, d).

    Exact for the stable and relativistic kinds.  For truncated/custom
    kinds one step aggregates the Brownian substitute with the thinned
    jumps of the dominating measure landed in the step (jump positions
    inside the step are not resolved; exit checks happen at step ends).
    """
    d, alpha = model.d, model.alpha
    if model.kind == "stable":
        return lambda dt, n, rng: sample_stable_increment(dt, rng, alpha, d, size=n)
    if model.kind == "relativistic":
        m = model.m
        return lambda dt, n, rng: sample_relativistic_increment(dt, rng, alpha, m, d, size=n)

    eps = 1e-3 if eps is None else float(eps)
    var_rate = small_jump_variance(model, eps)
    lam_stable = stable_tail_intensity(eps, alpha, d)
    extra, thin = _dominating_parts(model)
    lam_extra = extra.mass if extra is not None else 0.0

    def tail_radius(u):
        return eps * u ** (-1.0 / alpha)

    def step(dt, n, rng):
        out = np.sqrt(var_rate * dt) * rng.standard_normal((n, d))
        k = rng.poisson(lam_stable * dt, n)
        kmax = int(k.max()) if n else 0
        for j in range(1, kmax + 1):
            rows = k >= j
            nr = int(rows.sum())
            r = tail_radius(rng.uniform(size=nr))
            w = r[:, None] * _sphere(nr, d, rng)
            keep = rng.uniform(size=nr) < thin(r)
            wk = np.where(keep[:, None], w, 0.0)
            out[rows] += wk
        if lam_extra > 0:
            ke = rng.poisson(lam_extra * dt, n)
            kemax = int(ke.max()) if n else 0
            for j in range(1, kemax + 1):
                rows = ke >= j
                nr = int(rows.sum())
                w = extra.sample(rng, nr)
                r = np.linalg.norm(w, axis=1)
                # sub-eps extra jumps are already inside the Brownian substitute
                keep = (r >= eps) & (rng.uniform(size=nr) < thin(r))
                out[rows] += np.where(keep[:, None], w, 0.0)
        return out

    return step
