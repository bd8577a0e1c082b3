"""Batch front-end: configure, run and persist experiments reproducibly.

One JSON config file drives each run; outputs land in the chosen
directory as CSV/JSON files plus a manifest carrying the config hash,
seed, tool version and timestamps.  Reruns with the same config, seed
and worker count reproduce the CSV and JSON payload bytes exactly (the
manifest differs in its timestamps only).

Exit codes: 0 all checks passed, 2 inconclusive, 3 violated, 1 usage or
I/O errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .geometry import domain_from_dict
from .models import model_from_dict
from . import harness, perturbation
from .estimators import exit_time_mc, green_mc, green_wos_stable
from .paths import sample_perturbed_path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INCONCLUSIVE = 2
EXIT_VIOLATED = 3

_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "domain": {
            "type": "object",
            "properties": {
                "shape": {"enum": ["ball", "box", "interval", "polygon"]},
                "r0": {"type": "number", "exclusiveMinimum": 0},
                "lambda": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["shape"],
        },
        "model": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["stable", "relativistic", "truncated", "custom"]},
                "d": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0,
                          "exclusiveMaximum": 2},
                "m": {"type": "number", "minimum": 0},
                "cutoff": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "d", "alpha"],
        },
        "n_paths": {"type": "integer", "minimum": 1},
        "n_pairs": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "t": {"type": "number", "exclusiveMinimum": 0},
        "ts": {"type": "array", "items": {"type": "number"}},
        "x": {"type": "array", "items": {"type": "number"}},
        "y": {"type": "array", "items": {"type": "number"}},
        "z": {"type": "array", "items": {"type": "number"}},
        "zs": {"type": "array"},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "grid_n": {"type": "integer", "minimum": 16},
        "grid_L": {"type": "number", "exclusiveMinimum": 0},
        "experiment": {"enum": ["green", "moments", "poisson", "bhp"]},
    },
}


def _validate_config(cfg):
    import jsonschema
    try:
        jsonschema.validate(cfg, _SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "(root)"
        raise SystemExit(f"config error at {path}: {exc.message}")


def _config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _jsonify(obj):
    """Plain-python copy of nested payloads (numpy scalars/arrays included)."""
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class RunWriter:
    """Collects output files and writes the manifest at the end."""

    def __init__(self, out_dir, cfg, seed, workers):
        self.out_dir = out_dir
        self.cfg = cfg
        self.hash = _config_hash({**cfg, "seed": seed, "workers": workers})
        self.seed = seed
        self.workers = workers
        self.t_start = time.time()
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def write_csv(self, name, header, rows):
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# manifest={self.hash}\n")
            fh.write(header + "\n")
            for row in rows:
                fh.write(row + "\n")
        self.files.append(name)
        return p

    def write_json(self, name, payload):
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonify({"manifest": self.hash, **payload}), fh,
                      sort_keys=True, indent=1)
            fh.write("\n")
        self.files.append(name)
        return p

    def finish(self, status):
        manifest = {
            "config": self.cfg,
            "config_hash": self.hash,
            "seed": self.seed,
            "workers": self.workers,
            "version": __version__,
            "started": self.t_start,
            "finished": time.time(),
            "outputs": sorted(self.files),
            "status": status,
        }
        with open(self.path("manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")


def _load(args):
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"cannot read config: {exc}")
    else:
        cfg = {}
    _validate_config(cfg)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    workers = args.workers if args.workers is not None else int(
        cfg.get("workers", os.environ.get("LEVYGREEN_WORKERS", 1)))
    return cfg, seed, workers


def _need(cfg, key):
    if key not in cfg:
        raise SystemExit(f"config error at {key}: required for this subcommand")
    return cfg[key]


def cmd_density(args):
    cfg, seed, workers = _load(args)
    model = model_from_dict(_need(cfg, "model"))
    t = float(cfg.get("t", 1.0))
    w = RunWriter(args.out, cfg, seed, workers)
    grid, diag = perturbation.density_series(
        t, model, n=int(cfg.get("grid_n", 2048)), L=cfg.get("grid_L"))
    rows = [f"{_fmt(xv)},{_fmt(v)}" for xv, v in zip(grid.axis, grid.values)] \
        if grid.d == 1 else \
        [f"{_fmt(xv)},{_fmt(v)}" for xv, v in
         zip(grid.axis, grid.values[:, grid.n // 2])]
    w.write_csv("density.csv", "x,value", rows)
    w.write_json("density_diag.json", {"t": t, "diagnostics": diag})
    w.finish("ok")
    return EXIT_OK


def cmd_simulate(args):
    cfg, seed, workers = _load(args)
    model = model_from_dict(_need(cfg, "model"))
    domain = domain_from_dict(cfg["domain"]) if "domain" in cfg else None
    x = np.asarray(_need(cfg, "x"), dtype=float)
    horizon = float(cfg.get("horizon", 1.0))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    w = RunWriter(args.out, cfg, seed, workers)
    path = sample_perturbed_path(model, x, horizon,
                                 eps=float(cfg.get("eps", 1e-3)),
                                 dt=float(cfg.get("dt", 0.01)),
                                 rng=rng, domain=domain)
    d = path.positions.shape[1]
    header = "t," + ",".join(f"x{i}" for i in range(d)) + ",exited"
    flags = np.zeros(len(path.times), dtype=int)
    if path.exited:
        flags[path.exit_index:] = 1
    rows = [",".join([_fmt(t)] + [_fmt(c) for c in p] + [str(f)])
            for t, p, f in zip(path.times, path.positions, flags)]
    w.write_csv("path.csv", header, rows)
    w.finish("ok")
    return EXIT_OK


def cmd_exit(args):
    cfg, seed, workers = _load(args)
    model = model_from_dict(_need(cfg, "model"))
    domain = domain_from_dict(_need(cfg, "domain"))
    x = np.asarray(_need(cfg, "x"), dtype=float)
    w = RunWriter(args.out, cfg, seed, workers)
    est = exit_time_mc(domain, model, x, int(cfg.get("n_paths", 10000)), seed,
                       dt=float(cfg.get("dt", 0.005)), workers=workers,
                       refinement=True if model.kind != "stable" else False)
    w.write_json("exit.json", {"estimate": est.to_record()})
    w.finish("ok")
    return EXIT_INCONCLUSIVE if est.flagged else EXIT_OK


def cmd_green(args):
    cfg, seed, workers = _load(args)
    model = model_from_dict(_need(cfg, "model"))
    domain = domain_from_dict(_need(cfg, "domain"))
    x = np.asarray(_need(cfg, "x"), dtype=float)
    y = np.asarray(_need(cfg, "y"), dtype=float)
    w = RunWriter(args.out, cfg, seed, workers)
    if model.kind == "stable" and (domain.dim > model.alpha or domain.dim == 1):
        ests = green_wos_stable(domain, x, [y], int(cfg.get("n_paths", 10000)),
                                seed, model.alpha, workers=workers)
    else:
        ests = green_mc(domain, model, x, [y], int(cfg.get("n_paths", 10000)),
                        seed, h=cfg.get("h"), dt=float(cfg.get("dt", 0.004)),
                        workers=workers, eps=cfg.get("eps"))
    w.write_json("green.json", {"estimate": ests[0].to_record()})
    w.finish("ok")
    return EXIT_INCONCLUSIVE if ests[0].flagged else EXIT_OK


def cmd_poisson(args):
    cfg, seed, workers = _load(args)
    model = model_from_dict(_need(cfg, "model"))
    domain = domain_from_dict(_need(cfg, "domain"))
    x = np.asarray(_need(cfg, "x"), dtype=float)
    zs = [np.asarray(z, dtype=float) for z in _need(cfg, "zs")] \
        if "zs" in cfg else [np.asarray(_need(cfg, "z"), dtype=float)]
    w = RunWriter(args.out, cfg, seed, workers)
    rep = harness.compare_poisson(domain, model, x, zs,
                                  n_paths=int(cfg.get("n_paths", 6000)),
                                  seed=seed, dt=float(cfg.get("dt", 0.002)),
                                  workers=workers, eps=cfg.get("eps"))
    header, rows = rep.csv_rows()
    w.write_csv("poisson_ratios.csv", header, rows)
    w.write_json("poisson_report.json", {"report": rep.to_dict()})
    w.finish(rep.verdict)
    return {"bounded": EXIT_OK, "inconclusive": EXIT_INCONCLUSIVE,
            "violated": EXIT_VIOLATED}[rep.verdict]


def cmd_compare(args):
    cfg, seed, workers = _load(args)
    model = model_from_dict(_need(cfg, "model"))
    domain = domain_from_dict(_need(cfg, "domain"))
    experiment = cfg.get("experiment", "green")
    w = RunWriter(args.out, cfg, seed, workers)
    if experiment == "green":
        rep = harness.compare_green(domain, model,
                                    n_pairs=int(cfg.get("n_pairs", 20)),
                                    n_paths=int(cfg.get("n_paths", 10000)),
                                    seed=seed, h=cfg.get("h"),
                                    dt=float(cfg.get("dt", 0.004)),
                                    workers=workers, eps=cfg.get("eps"))
    elif experiment == "moments":
        rep = harness.compare_moments(domain, model,
                                      n_points=int(cfg.get("n_pairs", 12)),
                                      n_paths=int(cfg.get("n_paths", 20000)),
                                      seed=seed, dt=float(cfg.get("dt", 0.005)),
                                      workers=workers, eps=cfg.get("eps"))
    elif experiment == "bhp":
        z_pt = np.asarray(_need(cfg, "z"), dtype=float)
        rep = harness.bhp_check(domain, model, z_pt,
                                rho=float(cfg.get("rho", 0.25 * domain.diam)),
                                n_paths=int(cfg.get("n_paths", 10000)),
                                seed=seed, dt=float(cfg.get("dt", 0.004)),
                                workers=workers, eps=cfg.get("eps"))
    else:
        raise SystemExit(f"config error at experiment: unknown {experiment!r}")
    header, rows = rep.csv_rows()
    w.write_csv(f"compare_{experiment}.csv", header, rows)
    w.write_json(f"compare_{experiment}.json", {"report": rep.to_dict()})
    w.finish(rep.verdict)
    return {"bounded": EXIT_OK, "inconclusive": EXIT_INCONCLUSIVE,
            "violated": EXIT_VIOLATED}[rep.verdict]


def cmd_suite(args):
    """Reduced end-to-end verification sweep; --quick shrinks the sample
    counts so the whole battery runs in about a minute."""
    cfg, seed, workers = _load(args)
    quick = args.quick
    w = RunWriter(args.out, cfg, seed, workers)
    from .geometry import Ball, Interval
    from .models import (bump_perturbed_model, relativistic_model,
                         stable_model, truncated_model)
    from .stable import ball_green

    statuses = {}

    # 1. walk-on-spheres vs the exact ball Green function
    disk = Ball(center=(0.0, 0.0), radius=1.0)
    n = 4000 if quick else 100000
    pairs = [((0.2, 0.0), (-0.3, 0.1)), ((0.0, 0.0), (0.5, 0.0))]
    rows = []
    ok = True
    for i, (x, y) in enumerate(pairs):
        est = green_wos_stable(disk, x, [y], n, seed + i, 1.5, workers=workers)[0]
        exact = float(ball_green(np.asarray(x), np.asarray(y), 1.0, 1.5, 2))
        dev = (est.value - exact) / max(est.std_error, 1e-300)
        ok &= abs(dev) <= 3.0
        rows.append(f"{i},{_fmt(est.value)},{_fmt(est.std_error)},{_fmt(exact)},{_fmt(dev)}")
    w.write_csv("wos_vs_closed_form.csv", "pair,estimate,se,exact,dev_se", rows)
    statuses["wos_green"] = ok

    # 2. exit moments vs closed form
    est = exit_time_mc(disk, stable_model(2, 1.5), (0.0, 0.0),
                       2000 if quick else 50000, seed + 11, workers=workers)
    from .stable import ball_mean_exit
    exact = float(ball_mean_exit(np.zeros(2), 1.0, 1.5, 2))
    dev = (est.value - exact) / est.std_error
    statuses["exit_moment"] = abs(dev) <= 3.0
    w.write_json("exit_moment.json", {"estimate": est.to_record(),
                                      "exact": exact, "dev_se": dev})

    # 3. free-space domination of the truncated model
    rep = perturbation.domination_check(truncated_model(1, 1.2, 1.0),
                                        [0.25, 1.0], n=1024 if quick else 2048)
    statuses["domination"] = rep["passed"]
    w.write_json("domination.json", {"report": rep})

    # 4. exponent regression of the convolution integral
    rep4 = harness.calka_bound_check(1, 0.2, 0.1, -0.8,
                                     n_grid=2 ** 14 if quick else 2 ** 16)
    statuses["convolution_exponent"] = rep4["passed"]
    w.write_json("convolution_exponent.json", {"report": rep4})

    # 5. iteration contraction on a small disk
    scan = harness.greensmall_scan(truncated_model(2, 1.5, 1.0), [0.05],
                                   n_grid=64 if quick else 160, seed=seed)
    statuses["contraction"] = scan[0]["contracting"]
    w.write_json("contraction.json", {"scan": scan})

    # 6. Green comparability of the relativistic model on the disk
    rep6 = harness.compare_green(disk, relativistic_model(2, 1.2, 1.0),
                                 n_pairs=4 if quick else 20,
                                 n_paths=1500 if quick else 10000,
                                 seed=seed + 21, h=0.15 if quick else None,
                                 dt=0.01 if quick else 0.004, workers=workers)
    statuses["green_ratio_disk"] = rep6.verdict
    header, rows = rep6.csv_rows()
    w.write_csv("green_ratio_disk.csv", header, rows)
    w.write_json("green_ratio_disk.json", {"report": rep6.to_dict()})

    # 7. potential-kernel comparison for the bump perturbation
    rep7 = perturbation.potential_compare(bump_perturbed_model(1, 0.6),
                                          [0.01, 0.1, 1.0],
                                          t_nodes=24 if quick else 48)
    band = max(rep7["ratios"]) / min(rep7["ratios"])
    statuses["potential_ratio"] = band < 10.0
    w.write_json("potential_ratio.json", {"report": rep7})

    failed = [k for k, v in statuses.items() if v is False or v == "violated"]
    inconclusive = [k for k, v in statuses.items() if v == "inconclusive"]
    w.write_json("suite_summary.json", {"checks": {
        k: (v if isinstance(v, str) else ("pass" if v else "fail"))
        for k, v in statuses.items()}})
    w.finish("fail" if failed else ("inconclusive" if inconclusive else "ok"))
    for k, v in statuses.items():
        tag = v if isinstance(v, str) else ("pass" if v else "FAIL")
        print(f"{k}: {tag}")
    if failed:
        return EXIT_VIOLATED
    if inconclusive:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="levygreen",
        description="Green-function experiments for stable-like Levy processes")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [("density", cmd_density), ("simulate", cmd_simulate),
                     ("exit", cmd_exit), ("green", cmd_green),
                     ("poisson", cmd_poisson), ("compare", cmd_compare),
                     ("suite", cmd_suite)]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        if name == "suite":
            p.add_argument("--quick", action="store_true",
                           help="reduced sample counts")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_USAGE
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
