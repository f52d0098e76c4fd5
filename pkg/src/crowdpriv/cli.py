"""Command-line interface.

Without ``--config`` every command runs on the built-in two-room example.
Command-line flags take precedence over config-file values, which take
precedence over defaults.  Exit codes: 0 success, 1 invalid configuration,
2 numerical failure (not Schur, no convergence, singular bound argument,
infeasible calibration), 3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adversary, harness
from .covariance import performance, steady_state_cov
from .errors import (
    ConfigError,
    NotSchurError,
    NumericalError,
    PoolSizeUnsupportedError,
    ValidationError,
)
from .leakage import calibrate_noise, leakage_bound
from .model import require_valid, validate
from .simulate import map_batches, simulate_run

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _num(x):
    """Round to 12 significant digits so text and JSON agree."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if not math.isfinite(x):
        return x
    return float("%.12g" % x)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (int, float, np.floating, np.integer, bool, np.bool_)):
        return _num(obj)
    return obj


def _text(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.12g" % value
    return str(value)


def _render_text(payload, out, indent=""):
    for key, value in payload.items():
        if isinstance(value, dict):
            print(f"{indent}{key}:", file=out)
            _render_text(value, out, indent + "  ")
        elif isinstance(value, list) and value and isinstance(value[0], list):
            print(f"{indent}{key}:", file=out)
            for row in value:
                print(f"{indent}  [" + ", ".join(_text(v) for v in row) + "]", file=out)
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            print(f"{indent}{key}:", file=out)
            for item in value:
                print(f"{indent}  - " + ", ".join(f"{k}={_text(v)}" for k, v in item.items()),
                      file=out)
        elif isinstance(value, list):
            print(f"{indent}{key}: [" + ", ".join(_text(v) for v in value) + "]", file=out)
        else:
            print(f"{indent}{key}: {_text(value)}", file=out)


def _emit(args, payload):
    payload = _clean(payload)
    if args.format == "json":
        json.dump(payload, sys.stdout, indent=2, allow_nan=True)
        sys.stdout.write("\n")
    else:
        _render_text(payload, sys.stdout)


def _load(args, validate_config=True):
    if args.config:
        cfg = harness.load_config(args.config, validate=False)
    else:
        cfg = harness.two_room_example()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "sigma_xi", None) is not None:
        cfg = replace(cfg, sigma_xi=args.sigma_xi)
    if getattr(args, "runs", None) is not None:
        cfg = replace(cfg, runs=args.runs)
    if getattr(args, "horizon", None) is not None:
        burn = cfg.burn_in if cfg.burn_in is None or cfg.burn_in < args.horizon else None
        cfg = replace(cfg, horizon=args.horizon, burn_in=burn)
    if validate_config:
        report = validate(cfg.model, cfg.pool, cfg.observer())
        errors = report.errors
        if errors and all(_is_stability(msg) for msg in errors):
            # Well-formed but unstable: a numerical failure, not a bad config.
            raise NotSchurError("; ".join(errors), report.spectral_radii)
        require_valid(cfg.model, cfg.pool, cfg.observer())
    return cfg


def _is_stability(msg):
    return "not Schur" in msg or "mean-square radius" in msg


def _output_path(args, default_name):
    if args.output:
        return Path(args.output)
    return Path(os.environ.get(harness.OUTPUT_DIR_ENV, ".")) / default_name


# --- commands ---------------------------------------------------------------

def cmd_validate(args):
    cfg = _load(args, validate_config=False)
    report = validate(cfg.model, cfg.pool, cfg.observer())
    _emit(args, report.to_dict())
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_covariance(args):
    cfg = _load(args)
    obs = cfg.observer()
    E, trace = steady_state_cov(cfg.model, cfg.pool, obs, tol=args.tol, max_iter=args.max_iter,
                                keep_sequence=False)
    _emit(args, {
        "E_star": E,
        "perf_trace": performance(E, cfg.Omega),
        "iterations": trace.iterations,
        "step_residual": trace.residual,
        "fixed_point_residual": trace.fixed_point_residual,
    })
    return EXIT_OK


def cmd_leakage(args):
    cfg = _load(args)
    obs = cfg.observer()
    E, _ = steady_state_cov(cfg.model, cfg.pool, obs, keep_sequence=False)
    _emit(args, leakage_bound(cfg.model, cfg.pool, obs, E).to_dict())
    return EXIT_OK


def cmd_calibrate(args):
    cfg = _load(args)
    res = calibrate_noise(cfg.model, cfg.pool, cfg.observer(), args.epsilon, mode=args.mode,
                          base=cfg.xi_base, offset=cfg.xi_offset)
    payload = res.to_dict()
    payload["sigma_xi"] = res.lambda_
    _emit(args, payload)
    if not res.feasible:
        print(f"error: epsilon={args.epsilon:g} is below the asymptotic floor "
              f"{res.floor_nats:.6g} nats; no privacy noise of this shape achieves it",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(args):
    cfg = _load(args)
    traj = simulate_run(cfg.model, cfg.pool, cfg.observer(), cfg.horizon, cfg.seed)
    path = _output_path(args, "trajectory.csv")
    if path.exists() and not args.force:
        raise FileExistsError(f"{path} exists; use --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    n, p = cfg.model.n, cfg.pool.p
    header = (["k", "sensor"] + [f"y{i}" for i in range(p)] + [f"x{i}" for i in range(n)]
              + [f"xhat{i}" for i in range(n)] + [f"e{i}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in traj.to_rows():
            w.writerow([str(row[0]), str(row[1])] + ["%.12e" % v for v in row[2:]])
    _emit(args, {"output": str(path), "horizon": cfg.horizon, "seed": cfg.seed})
    return EXIT_OK


def cmd_adversary(args):
    cfg = _load(args)
    obs = cfg.observer()
    burn = cfg.effective_burn_in
    C = cfg.pool.sensors[0].C
    if args.detector == "map":
        batches = map_batches(lambda b: (adversary.map_detect(b, cfg.model, cfg.pool, obs),
                                         b.sensor_ids),
                              cfg.model, cfg.pool, obs, cfg.horizon, cfg.runs, cfg.seed,
                              threads=args.threads)
        tau = float("nan")
    else:
        if cfg.pool.m != 2:
            raise PoolSizeUnsupportedError(
                f"threshold detector needs exactly 2 sensors, got {cfg.pool.m}")
        if args.tau is not None:
            tau = args.tau
        elif args.best_tau or cfg.tau is None:
            taus = cfg.tau_grid.values()
            acc = np.concatenate(map_batches(
                lambda b: adversary.threshold_accuracy_by_run(b, C, taus, burn),
                cfg.model, cfg.pool, obs, cfg.horizon, cfg.runs, cfg.seed, threads=args.threads))
            _, tau = harness.best_tau(acc, taus)
        else:
            tau = cfg.tau
        batches = map_batches(lambda b: (adversary.threshold_detect(b, tau, C), b.sensor_ids),
                              cfg.model, cfg.pool, obs, cfg.horizon, cfg.runs, cfg.seed,
                              threads=args.threads)
    pred = np.concatenate([b[0] for b in batches])
    actual = np.concatenate([b[1] for b in batches])
    rep = adversary.detection_rate(pred, actual, burn, tau=tau, n_sensors=cfg.pool.m)
    _emit(args, rep.to_dict())
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load(args)
    if args.axis:
        cfg = replace(cfg, axis=args.axis)
    if cfg.axis == "tau" and args.axis and not args.config:
        cfg = replace(cfg, sweep=cfg.tau_grid)
    path = _output_path(args, cfg.output)
    rows = harness.run_sweep(cfg, output=path, overwrite=args.force, threads=args.threads)
    _emit(args, {"output": str(path), "rows": len(rows), "axis": cfg.axis})
    return EXIT_OK


def cmd_reproduce(args):
    out = args.out_dir or os.environ.get(harness.OUTPUT_DIR_ENV, "figures")
    paths = harness.reproduce_figures(out, seed=args.seed if args.seed is not None else 0,
                                    threads=args.threads, runs=args.runs, horizon=args.horizon,
                                    overwrite=args.force)
    _emit(args, {"outputs": [str(p) for p in paths]})
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="TOML experiment config (default: two-room example)")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--output", "-o", help="output file")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--threads", type=int, default=1, help="max worker threads")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--sigma-xi", type=float, help="privacy-noise magnitude")
    common.add_argument("--runs", type=int, help="Monte Carlo runs")
    common.add_argument("--horizon", type=int, help="steps per run")

    parser = argparse.ArgumentParser(
        prog="crowdpriv",
        description="Privacy-preserving state estimation with crowd sensors.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check a configuration").set_defaults(
        func=cmd_validate)

    p = sub.add_parser("covariance", parents=[common], help="steady-state error covariance")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.set_defaults(func=cmd_covariance)

    sub.add_parser("leakage", parents=[common], help="information-leakage bound").set_defaults(
        func=cmd_leakage)

    p = sub.add_parser("calibrate", parents=[common], help="privacy-noise calibration")
    p.add_argument("--epsilon", type=float, required=True, help="leakage budget in nats")
    p.add_argument("--mode", choices=("envelope", "self-consistent"), default="self-consistent")
    p.set_defaults(func=cmd_calibrate)

    sub.add_parser("simulate", parents=[common], help="write one trajectory as CSV").set_defaults(
        func=cmd_simulate)

    p = sub.add_parser("adversary", parents=[common], help="sensor-identity detection rate")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--tau", type=float)
    g.add_argument("--best-tau", action="store_true")
    p.add_argument("--detector", choices=("threshold", "map"), default="threshold")
    p.set_defaults(func=cmd_adversary)

    p = sub.add_parser("sweep", parents=[common], help="parameter sweep to CSV")
    p.add_argument("--axis", choices=harness.AXES)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reproduce-paper", parents=[common],
                       help="data for the four figures of the two-room example")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_reproduce)
    return parser


def _fail(args, code, exc):
    print(f"error: {exc}", file=sys.stderr)
    if getattr(args, "format", "text") == "json":
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        report = getattr(exc, "report", None)
        if report is not None:
            payload["report"] = _clean(report.to_dict())
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, PoolSizeUnsupportedError) as exc:
        return _fail(args, EXIT_INVALID, exc)
    except NumericalError as exc:
        return _fail(args, EXIT_NUMERIC, exc)
    except (ConfigError, OSError) as exc:
        return _fail(args, EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
