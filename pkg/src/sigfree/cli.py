"""Command-line entry point: ``sigfree <command> --config cfg.json``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analytics, engine
from .config import ConfigError, ExperimentConfig, default_dict, from_dict, load
from .core import ModelError
from .scheduler import bernoulli_arrivals, micro_sim

OUTPUT_ENV = "SIGFREE_OUTPUT_DIR"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _progress(label):
    def report(done, total):
        print(f"\r{label}: {done}/{total}", end="" if done < total else "\n", file=sys.stderr, flush=True)
    return report


def _sim_config(cfg: ExperimentConfig, policy: str) -> engine.SimConfig:
    return engine.SimConfig(cfg.spec, policy, cfg.horizon, cfg.warmup, cfg.seed,
                            cfg.replications, cfg.beta, cfg.tie_rule, cfg.mode)


def cmd_bounds(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    rep = analytics.bounds_report(cfg.lam, cfg.spec.headways, cfg.spec.crossing, cfg.beta)
    path = out / "bounds.json"
    _write_json(path, rep.to_dict())
    return [path]


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    rows = []
    for pol in cfg.policies:
        res = engine.run(_sim_config(cfg, pol))
        rows.append((cfg.lam[0], cfg.lam[1], pol, len(res.runs),
                     res.mean("time_avg_workload"), res.half_width("time_avg_workload"),
                     res.mean("per_vehicle_delay_mean"), res.mean("throughput"),
                     res.mean("switchovers"), res.verdict))
        print(f"simulated {pol}", file=sys.stderr)
    path = out / "simulate.csv"
    _write_csv(path, ["lam1", "lam2", "policy", "replications", "time_avg_workload",
                      "workload_ci95", "mean_delay", "throughput", "switchovers", "verdict"], rows)
    return [path]


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    if not cfg.grid:
        raise ConfigError("intersection.grid", "sweep needs a grid")
    base = _sim_config(cfg, cfg.policies[0])
    rows = engine.estimate_delay_surface(cfg.grid, base, cfg.policies, jobs=args.jobs,
                                         progress=_progress("sweep"))
    path = out / "sweep.csv"
    _write_csv(path, ["lam1", "lam2", "policy", "mean_delay", "congested", "verdict"],
               [(r.lam1, r.lam2, r.policy, r.mean_delay, r.congested, r.verdict) for r in rows])
    return [path]


def cmd_region(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    theta, c = cfg.spec.headways, cfg.spec.crossing
    fan = analytics.ray_fan(cfg.rays)
    caps = {pol: [analytics.scalar_capacity(p, pol, theta, c.mean, c.r_max) for p in fan]
            for pol in cfg.policies}
    boundary, curve = [], []
    for pol in cfg.policies:
        for i, p in enumerate(fan):
            lb = caps[pol][i]
            boundary.append((pol, i, p[0], p[1], lb * p[0], lb * p[1]))
    for i, p in enumerate(fan):
        curve.append((p[0], *[caps[pol][i] for pol in cfg.policies]))
    b_path, c_path = out / "region.csv", out / "capacity_curve.csv"
    _write_csv(b_path, ["policy", "ray", "p1", "p2", "lam1", "lam2"], boundary)
    _write_csv(c_path, ["p1", *[f"lambda_bar_{p}" for p in cfg.policies]], curve)
    return [b_path, c_path]


def cmd_micro_sim(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    ap = cfg.approach
    r_mean = cfg.spec.crossing.mean
    arrivals = bernoulli_arrivals(cfg.lam, ap, cfg.micro_duration, cfg.seed, r_mean)
    written, summary = [], []
    for pol in cfg.policies:
        res = micro_sim(pol, cfg.spec.headways, r_mean, ap, arrivals, cfg.beta, cfg.tie_rule,
                        record_trajectory=True)
        d_path = out / f"micro_{pol}_delays.csv"
        t_path = out / f"micro_{pol}_trajectory.csv"
        res.write_delays(d_path)
        res.write_trajectory(t_path)
        written += [d_path, t_path]
        summary.append((pol, len(res.delays), res.mean_delay, res.max_set_error,
                        res.safety_violations, res.min_spacing))
        print(f"micro-sim {pol}: {len(res.delays)} vehicles", file=sys.stderr)
    s_path = out / "micro_summary.csv"
    _write_csv(s_path, ["policy", "vehicles", "mean_delay", "max_set_time_error",
                        "safety_violations", "min_spacing"], summary)
    return [s_path] + written


def drift_states(cfg: ExperimentConfig):
    """Random (x, y) with ||x||_1 uniform on the configured range and both classes present."""
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.drift_norm_range
    norms = rng.uniform(lo, hi, cfg.drift_states)
    share = rng.uniform(0.05, 0.95, cfg.drift_states)
    ys = rng.integers(1, 3, cfg.drift_states)
    return [((n * s, n * (1 - s)), int(y)) for n, s, y in zip(norms, share, ys)]


def cmd_drift_probe(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    rows = []
    states = drift_states(cfg)
    for i, (x, y) in enumerate(states):
        est = engine.drift_probe(x, y, cfg.spec, samples=cfg.drift_samples, seed=cfg.seed)
        norm = sum(x)
        rows.append((x[0], x[1], y, est.closed_form, est.monte_carlo, est.std_error, est.z,
                     -est.c1 * norm + est.d1))
        if (i + 1) % 50 == 0 or i + 1 == len(states):
            _progress("drift")(i + 1, len(states))
    path = out / "drift.csv"
    _write_csv(path, ["x1", "x2", "y", "closed_form", "monte_carlo", "std_error", "z", "linear_bound"], rows)
    return [path]


COMMANDS = {
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "region": cmd_region,
    "micro-sim": cmd_micro_sim,
    "drift-probe": cmd_drift_probe,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sigfree", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override simulation.seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV} or ./sigfree-out)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"simulation.seed": args.seed}
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be at least 1")
        cfg = load(args.config, overrides) if args.config else from_dict(default_dict(), overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.output or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "sigfree-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
