"""Monte Carlo and quadrature estimators on bounded domains.

Every estimator returns an Estimate carrying the value, its CLT standard
error, the sample count and the seed, and is reproducible bit for bit
for a fixed (seed, worker count): the seed space splits deterministically
into one child stream per worker chunk and chunk results merge by index
with streaming mean/variance accumulation.  Worker chunks run on a
thread pool (the heavy numpy kernels release the GIL).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import betaincinv

from .geometry import Ball, Interval
from .models import LevyModel
from .paths import increment_sampler
from .stable import (ball_green, ball_mean_exit, cached_density,
                     interval_green, sphere_surface)

__all__ = [
    "Estimate", "exit_time_mc", "green_wos_stable", "green_mc",
    "killed_density_mc", "poisson_kernel_iw", "harmonic_eval",
    "closed_form_green", "default_bandwidth",
]


@dataclass
class Estimate:
    """A Monte Carlo or quadrature value with provenance."""

    value: float
    std_error: float
    n_samples: int
    seed: int
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_record(self):
        return {"value": self.value, "se": self.std_error, "n": self.n_samples,
                "seed": self.seed, "method": self.method,
                "diagnostics": self.diagnostics}

    def to_json(self):
        return json.dumps(self.to_record(), sort_keys=True)

    @property
    def flagged(self):
        return bool(self.diagnostics.get("flags"))


def _chunks(seed, n, workers):
    """Deterministic (rng, chunk_size) pairs for worker splitting."""
    workers = max(1, int(workers))
    base = n // workers
    sizes = [base + (1 if i < n % workers else 0) for i in range(workers)]
    seqs = np.random.SeedSequence(seed).spawn(workers)
    return [(np.random.default_rng(s), sz) for s, sz in zip(seqs, sizes) if sz > 0]


def _run_chunks(fn, seed, n, workers):
    """fn(rng, size) -> (sum, sumsq, count[, extras...]); merged in order."""
    parts = _chunks(seed, n, workers)
    if len(parts) == 1:
        results = [fn(*parts[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            results = list(pool.map(lambda p: fn(*p), parts))
    return results


def _merge_moments(results):
    s = sum(r[0] for r in results)
    ss = sum(r[1] for r in results)
    n = sum(r[2] for r in results)
    mean = s / n
    var = np.maximum(ss / n - mean ** 2, 0.0)
    se = np.sqrt(var / n)
    return mean, se, n


def default_bandwidth(domain, n):
    """Kernel bandwidth diam * n^{-1/(d+4)} (standard density rate)."""
    return domain.diam * n ** (-1.0 / (domain.dim + 4))


def _epanechnikov_norm(d, h):
    if d == 1:
        return 0.75 / h
    if d == 2:
        return 2.0 / (math.pi * h ** 2)
    raise NotImplementedError("kernel estimators support d <= 2")


# ---------------------------------------------------------------------------
# exit times
# ---------------------------------------------------------------------------

def _wos_exit_accumulate(domain, x, alpha, rng, n, shrink, shell, collect=None,
                         step_budget=10_000):
    """Shared walk-on-spheres sweep for the stable process.

    Accumulates the mean exit time unbiasedly (sum of per-ball mean exit
    times) and optionally per-walk Green sums and exit positions via the
    collect hooks.  Returns (tau_sums, exit_positions, n_absorbed).
    """
    d = domain.dim
    pos = np.tile(np.asarray(x, dtype=float).reshape(1, d), (n, 1))
    tau = np.zeros(n)
    exit_pos = np.full((n, d), np.nan)
    alive = np.ones(n, dtype=bool)
    absorbed = 0
    steps = 0
    while alive.any():
        steps += 1
        if steps > step_budget:
            raise RuntimeError("walk-on-spheres step budget exceeded")
        idx = np.flatnonzero(alive)
        p = pos[idx]
        delta = domain.dist_to_boundary(p)
        r = shrink * delta
        tau[idx] += ball_mean_exit(np.zeros(len(idx)), r, alpha, d)
        if collect is not None:
            collect(idx, p, r)
        bdraw = betaincinv(1 - alpha / 2, alpha / 2, rng.uniform(size=len(idx)))
        rho = r / np.sqrt(1.0 - bdraw)
        if d == 1:
            direc = rng.choice([-1.0, 1.0], size=(len(idx), 1))
        else:
            v = rng.standard_normal((len(idx), d))
            direc = v / np.linalg.norm(v, axis=1, keepdims=True)
        newp = p + rho[:, None] * direc
        pos[idx] = newp
        outside = ~domain.contains(newp)
        shell_hit = ~outside & (domain.dist_to_boundary(newp) <= shell)
        done = outside | shell_hit
        exit_pos[idx[done]] = newp[done]
        absorbed += int(shell_hit.sum())
        alive[idx[done]] = False
    return tau, exit_pos, absorbed


def exit_time_mc(domain, model, x, n, seed, dt=0.005, workers=1,
                 horizon_cap=None, refinement=False):
    """Mean exit time from the domain started at x.

    The stable kind uses the unbiased walk-on-spheres accumulation (no
    time grid); other kinds walk exact or dominated increments on the dt
    grid with exit checks at grid times, which detects exits late, so the
    estimate is biased upward at O(dt) scale.  refinement=True reruns at
    dt/2 with fresh substreams and reports the drift in the diagnostics.
    Paths still alive past the horizon cap are truncated and flagged when
    they exceed 0.1% of the sample.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not domain.contains(x):
        raise ValueError("x must lie inside the domain")
    if model.kind == "stable":
        shell = 1e-4 * domain.diam

        def body(rng, size):
            tau, _, absorbed = _wos_exit_accumulate(
                domain, x, model.alpha, rng, size, 0.95, shell)
            return tau.sum(), (tau ** 2).sum(), size, absorbed

        results = _run_chunks(body, seed, n, workers)
        mean, se, count = _merge_moments(results)
        absorbed = sum(r[3] for r in results)
        return Estimate(value=float(mean), std_error=float(se), n_samples=count,
                        seed=seed, method="exit_wos",
                        diagnostics={"absorbed_fraction": absorbed / count})

    cap = horizon_cap if horizon_cap is not None else 400.0 * max(domain.diam, 1.0)

    def walk(rng, size, step_dt):
        stepper = increment_sampler(model)
        pos = np.tile(x.reshape(1, -1), (size, 1))
        tau = np.zeros(size)
        alive = np.ones(size, dtype=bool)
        t = 0.0
        capped = 0
        while alive.any():
            t += step_dt
            idx = np.flatnonzero(alive)
            pos[idx] += stepper(step_dt, len(idx), rng)
            out = ~domain.contains(pos[idx])
            tau[idx[out]] = t
            alive[idx[out]] = False
            if t >= cap:
                capped = int(alive.sum())
                tau[alive] = t
                alive[:] = False
        return tau.sum(), (tau ** 2).sum(), size, capped

    results = _run_chunks(lambda rng, size: walk(rng, size, dt), seed, n, workers)
    mean, se, count = _merge_moments(results)
    capped = sum(r[3] for r in results)
    diag = {"dt": dt, "capped_fraction": capped / count}
    if capped / count > 1e-3:
        diag["flags"] = ["horizon_cap"]
    if refinement:
        res2 = _run_chunks(lambda rng, size: walk(rng, size, dt / 2),
                           seed + 1, n, workers)
        mean2, se2, _ = _merge_moments(res2)
        diag["refined_value"] = float(mean2)
        diag["refinement_drift_se"] = float((mean - mean2) / max(se, 1e-300))
    return Estimate(value=float(mean), std_error=float(se), n_samples=count,
                    seed=seed, method="exit_grid_walk", diagnostics=diag)


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------

def closed_form_green(domain, alpha):
    """Vectorized exact Green function of a ball or interval, else None."""
    if isinstance(domain, Ball) and (domain.dim > alpha or domain.dim == 1):
        c = np.asarray(domain.center)

        def g(x, y):
            return ball_green(np.asarray(x) - c, np.asarray(y) - c,
                              domain.radius, alpha, domain.dim)

        return g
    if isinstance(domain, Interval):
        def g(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            if x.ndim and x.shape[-1] == 1:
                x = x[..., 0]
            if y.ndim and y.shape[-1] == 1:
                y = y[..., 0]
            return interval_green(x, y, domain.a, domain.b, alpha)

        return g
    return None


def green_wos_stable(domain, x, ys, n, seed, alpha, workers=1, shrink=0.95,
                     shell_factor=1e-4):
    """Walk-on-spheres estimates of the stable Green function G(x, y_j).

    Unbiased: each step at position p with inscribed radius r adds the
    ball Green value G_{B(p,r)}(p, y) for the targets inside that ball,
    then jumps to an exact exit sample of the ball.  Walks entering the
    boundary shell are absorbed (the shell's Green contribution vanishes
    at the boundary).  Requires d > alpha or d = 1.
    """
    d = domain.dim
    if d > 1 and d <= alpha:
        raise ValueError("walk-on-spheres Green estimates need d > alpha")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if ys.shape[1] != d:
        ys = ys.reshape(-1, d)
    shell = shell_factor * domain.diam

    def body(rng, size):
        acc = np.zeros((size, len(ys)))

        def collect(idx, p, r):
            for j, y in enumerate(ys):
                dy = y[None, :] - p
                dyn = np.linalg.norm(dy, axis=1)
                hit = dyn < r
                if hit.any():
                    acc[idx[hit], j] += _ball_green_from_center(
                        r[hit], dy[hit], alpha, d)

        tau, _, absorbed = _wos_exit_accumulate(domain, x, alpha, rng, size,
                                                shrink, shell, collect=collect)
        return acc.sum(axis=0), (acc ** 2).sum(axis=0), size, absorbed

    results = _run_chunks(body, seed, n, workers)
    mean, se, count = _merge_moments(results)
    absorbed = sum(r[3] for r in results)
    out = []
    for j in range(len(ys)):
        out.append(Estimate(value=float(mean[j]), std_error=float(se[j]),
                            n_samples=count, seed=seed, method="green_wos",
                            diagnostics={"absorbed_fraction": absorbed / count}))
    return out


def _ball_green_from_center(r, dy, alpha, d):
    """G_{B(0,r)}(0, dy) vectorized over rows with per-row radius r."""
    return (ball_green(np.zeros_like(dy), dy / r[:, None], 1.0, alpha, d)
            * r ** (alpha - d))


def green_mc(domain, model, x, ys, n, seed, h=None, dt=0.004, workers=1,
             eps=None, horizon_cap=None, functionals=None):
    """Occupation-time kernel estimates of the Green function G(x, y_j).

    Each path accumulates dt * K_h(X_t - y) at its grid times until exit
    (Epanechnikov kernel).  The estimator targets the kernel-smoothed
    Green function (K_h * G(x, .))(y); the h/2 diagnostic reruns the
    deposit with half bandwidth on the same paths and reports the shift
    in standard errors.  Targets outside the domain return exactly zero.

    functionals: optional (n_y, k) array of weights; the return value is
    then (estimates, functional_estimates) where the latter are Estimates
    of sum_j F[j, k] G(x, y_j) with per-path standard errors (the proper
    route to integrated quantities, since targets share paths).
    """
    d = domain.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if ys.shape[1] != d:
        ys = ys.reshape(-1, d)
    if h is None:
        h = default_bandwidth(domain, n)
    inside = domain.contains(ys)
    near_x = np.linalg.norm(ys - x[None, :], axis=1) < 2 * h
    if near_x.any() and functionals is None:
        raise ValueError("targets closer than 2h to x: diagonal blow-up "
                         "is excluded (shrink h or move the target)")
    cap = horizon_cap if horizon_cap is not None else 400.0 * max(domain.diam, 1.0)
    ck = _epanechnikov_norm(d, h)
    ck2 = _epanechnikov_norm(d, h / 2)
    fmat = None
    if functionals is not None:
        fmat = np.asarray(functionals, dtype=float).reshape(len(ys), -1)

    def body(rng, size):
        stepper = increment_sampler(model, eps=eps)
        pos = np.tile(x.reshape(1, -1), (size, 1))
        acc = np.zeros((size, len(ys)))
        acc_h2 = np.zeros((size, len(ys)))
        alive = np.ones(size, dtype=bool)
        t = 0.0
        ys_in = ys[inside]
        cols = np.flatnonzero(inside)
        y_sq = (ys_in ** 2).sum(axis=1)
        while alive.any():
            idx = np.flatnonzero(alive)
            p = pos[idx]
            if len(cols):
                d2 = ((p ** 2).sum(axis=1)[:, None] + y_sq[None, :]
                      - 2.0 * p @ ys_in.T) / h ** 2
                np.clip(d2, 0.0, None, out=d2)
                w = d2 < 1.0
                if w.any():
                    rows, jj = np.nonzero(w)
                    acc[idx[rows], cols[jj]] += dt * ck * (1.0 - d2[rows, jj])
                w2 = d2 < 0.25
                if w2.any():
                    rows, jj = np.nonzero(w2)
                    acc_h2[idx[rows], cols[jj]] += dt * ck2 * (1.0 - 4.0 * d2[rows, jj])
            pos[idx] = p + stepper(dt, len(idx), rng)
            t += dt
            out = ~domain.contains(pos[idx])
            alive[idx[out]] = False
            if t >= cap:
                alive[:] = False
        fsum = fsumsq = None
        if fmat is not None:
            fvals = acc @ fmat
            fsum = fvals.sum(axis=0)
            fsumsq = (fvals ** 2).sum(axis=0)
        return (acc.sum(axis=0), (acc ** 2).sum(axis=0), size,
                acc_h2.sum(axis=0), fsum, fsumsq)

    results = _run_chunks(body, seed, n, workers)
    mean, se, count = _merge_moments(results)
    mean_h2 = sum(r[3] for r in results) / count
    out = []
    for j in range(len(ys)):
        if not inside[j]:
            out.append(Estimate(value=0.0, std_error=0.0, n_samples=count,
                                seed=seed, method="green_occupation",
                                diagnostics={"outside_domain": True}))
            continue
        shift = (mean[j] - mean_h2[j]) / max(se[j], 1e-300)
        diag = {"h": h, "dt": dt, "half_h_value": float(mean_h2[j]),
                "half_h_shift_se": float(shift)}
        if abs(shift) > 3.0:
            diag["flags"] = ["bandwidth_bias"]
        out.append(Estimate(value=float(mean[j]), std_error=float(se[j]),
                            n_samples=count, seed=seed,
                            method="green_occupation", diagnostics=diag))
    if fmat is None:
        return out
    fres = [(r[4], r[5], r[2]) for r in results]
    fmean, fse, _ = _merge_moments(fres)
    fests = [Estimate(value=float(fmean[k]), std_error=float(fse[k]),
                      n_samples=count, seed=seed, method="green_functional",
                      diagnostics={"h": h, "dt": dt})
             for k in range(fmat.shape[1])]
    return out, fests


def killed_density_mc(domain, model, t, x, ys, n, seed, h=None, dt=0.004,
                      workers=1, eps=None):
    """Kernel estimates of the killed transition density p_D(t, x, y_j).

    Paths run to time t on the dt grid; survivors deposit K_h at the
    position of their last node <= t (no interpolation across jumps).
    Fewer than 100 survivors flags the estimates.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    d = domain.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if ys.shape[1] != d:
        ys = ys.reshape(-1, d)
    if h is None:
        h = default_bandwidth(domain, n)
    ck = _epanechnikov_norm(d, h)
    steps = max(1, int(round(t / dt)))
    step_dt = t / steps

    def body(rng, size):
        stepper = increment_sampler(model, eps=eps)
        pos = np.tile(x.reshape(1, -1), (size, 1))
        alive = np.ones(size, dtype=bool)
        for _ in range(steps):
            idx = np.flatnonzero(alive)
            pos[idx] += stepper(step_dt, len(idx), rng)
            out = ~domain.contains(pos[idx])
            alive[idx[out]] = False
        acc = np.zeros((size, len(ys)))
        p = pos[alive]
        for j in range(len(ys)):
            u2 = ((p - ys[j]) ** 2).sum(axis=1) / h ** 2
            w = u2 < 1.0
            acc[np.flatnonzero(alive)[w], j] = ck * (1.0 - u2[w])
        return acc.sum(axis=0), (acc ** 2).sum(axis=0), size, int(alive.sum())

    results = _run_chunks(body, seed, n, workers)
    mean, se, count = _merge_moments(results)
    survivors = sum(r[3] for r in results)
    out = []
    for j in range(len(ys)):
        diag = {"h": h, "dt": step_dt, "survivors": survivors}
        if survivors < 100:
            diag["flags"] = ["few_survivors"]
        out.append(Estimate(value=float(mean[j]), std_error=float(se[j]),
                            n_samples=count, seed=seed,
                            method="killed_density_kernel", diagnostics=diag))
    return out


# ---------------------------------------------------------------------------
# Poisson kernel and harmonic measure
# ---------------------------------------------------------------------------

def _disk_nodes_polar(domain, x, n_r, n_th):
    """Polar quadrature nodes of a disk/ball centered for the pole at x."""
    c = np.asarray(domain.center)
    xr = np.asarray(x, dtype=float) - c
    ur, wr = np.polynomial.legendre.leggauss(n_r)
    th = (np.arange(n_th) + 0.5) * (2 * np.pi / n_th)
    wth = 2 * np.pi / n_th
    R = domain.radius
    nodes = []
    weights = []
    for ct, st in zip(np.cos(th), np.sin(th)):
        u = np.array([ct, st])
        b = xr @ u
        rho_max = -b + math.sqrt(max(R ** 2 - xr @ xr + b ** 2, 0.0))
        rho = 0.5 * rho_max * (ur + 1.0)
        w = 0.5 * rho_max * wr * rho * wth
        nodes.append(np.asarray(x)[None, :] + rho[:, None] * u[None, :])
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def poisson_kernel_iw(domain, model, x, z, green_provider, n_r=48, n_th=64,
                      refine_check=True):
    """Exit density at z by the Ikeda-Watanabe representation
    P(x, z) = int_D G(x, y) nu(y - z) dy.

    green_provider(x, ys) evaluates the Green function at many targets.
    Polar quadrature around the pole at x absorbs the Green singularity;
    the resolution-doubled value gives the error estimate, and a target z
    very close to the boundary flags the result instead of refining
    forever.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not domain.contains(x):
        raise ValueError("x must lie inside the domain")
    if domain.contains(z) or domain.dist_to_boundary(z) == 0:
        raise ValueError("z must lie outside the closed domain")

    def run(nr, nth):
        if isinstance(domain, Interval):
            lo, hi = domain.a, domain.b
            u, w = np.polynomial.legendre.leggauss(nr)
            vals = 0.0
            for a, b in ((lo, x[0]), (x[0], hi)):
                yy = 0.5 * (b - a) * u + 0.5 * (a + b)
                ww = 0.5 * (b - a) * w
                g = np.asarray(green_provider(np.full_like(yy, x[0]), yy))
                nu = model.levy_density_radial(np.abs(yy - z[0]))
                vals += float((g * nu * ww).sum())
            return vals
        if isinstance(domain, Ball) and domain.dim == 2:
            nodes, weights = _disk_nodes_polar(domain, x, nr, nth)
            g = np.asarray(green_provider(np.tile(x, (len(nodes), 1)), nodes))
            nu = model.levy_density_radial(
                np.linalg.norm(nodes - z[None, :], axis=1))
            return float((g * nu * weights).sum())
        raise NotImplementedError("Poisson kernel quadrature supports intervals "
                                  "and 2D balls")

    val = run(n_r, n_th)
    err = None
    flags = []
    if refine_check:
        val2 = run(2 * n_r, 2 * n_th if not isinstance(domain, Interval) else n_th)
        err = abs(val2 - val)
        val = val2
    delta_z = float(domain.dist_to_boundary(z))
    if delta_z < 1e-3 * domain.diam:
        flags.append("z_near_boundary")
    diag = {"quad_error": err, "delta_z": delta_z}
    if flags:
        diag["flags"] = flags
    return Estimate(value=val, std_error=err if err is not None else 0.0,
                    n_samples=0, seed=0, method="poisson_iw", diagnostics=diag)


def harmonic_eval(domain, model, boundary_data, x, n, seed, dt=0.005,
                  workers=1, horizon_cap=None, eps=None):
    """Monte Carlo average of boundary_data at the exit position.

    The stable kind exits via walk-on-spheres (exact exit law up to the
    boundary-shell absorption, where boundary_data is evaluated at the
    absorbed point); other kinds use the grid walk.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if model.kind == "stable":
        shell = 1e-4 * domain.diam

        def body(rng, size):
            _, exit_pos, absorbed = _wos_exit_accumulate(
                domain, x, model.alpha, rng, size, 0.95, shell)
            vals = np.asarray(boundary_data(exit_pos), dtype=float)
            return vals.sum(), (vals ** 2).sum(), size, absorbed

        results = _run_chunks(body, seed, n, workers)
        mean, se, count = _merge_moments(results)
        absorbed = sum(r[3] for r in results)
        return Estimate(value=float(mean), std_error=float(se), n_samples=count,
                        seed=seed, method="harmonic_wos",
                        diagnostics={"absorbed_fraction": absorbed / count})

    cap = horizon_cap if horizon_cap is not None else 400.0 * max(domain.diam, 1.0)

    def body(rng, size):
        stepper = increment_sampler(model, eps=eps)
        pos = np.tile(x.reshape(1, -1), (size, 1))
        exit_pos = np.full((size, domain.dim), np.nan)
        alive = np.ones(size, dtype=bool)
        t = 0.0
        capped = 0
        while alive.any():
            t += dt
            idx = np.flatnonzero(alive)
            pos[idx] += stepper(dt, len(idx), rng)
            out = ~domain.contains(pos[idx])
            exit_pos[idx[out]] = pos[idx[out]]
            alive[idx[out]] = False
            if t >= cap:
                capped = int(alive.sum())
                exit_pos[alive] = pos[alive]
                alive[:] = False
        vals = np.asarray(boundary_data(exit_pos), dtype=float)
        return vals.sum(), (vals ** 2).sum(), size, capped

    results = _run_chunks(body, seed, n, workers)
    mean, se, count = _merge_moments(results)
    capped = sum(r[3] for r in results)
    diag = {"dt": dt, "capped_fraction": capped / count}
    if capped / count > 1e-3:
        diag["flags"] = ["horizon_cap"]
    return Estimate(value=float(mean), std_error=float(se), n_samples=count,
                    seed=seed, method="harmonic_walk", diagnostics=diag)
