"""Command-line interface: ``wmblowup <subcommand> [config] [options]``.

Exit codes: 0 success, 1 threshold or module failure, 2 usage or configuration
error, 3 input/output error.
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import load_config, schema_help
from .core import StatePair, modal_decompose
from .ensemble import InitialData, amplitude_sweep, build_initial, run_ensemble
from .errors import ConfigError
from .noise import NoiseModel, path_seed, sample_convolution
from .profiles import gauge_mode, profile_residual, residual_grid
from .similarity import apply_operator, similarity_operator, xi_grid

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
PROFILE_TOL, GAUGE_TOL, STEER_TOL = 1e-4, 1e-3, 1e-3
SNAPSHOTS = 16  # regular snapshots per simulate run, besides the level crossings


class _Failure(Exception):
    """Threshold failure carrying the report to print."""

    def __init__(self, report):
        super().__init__("threshold failure")
        self.report = report


def _emit(report, out=None, name="report.json"):
    text = json.dumps(report, indent=2, default=float)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _data(cfg, choice, grid):
    """Initial data from ``--data``: a kind name, ``perturbed:EPS`` or a CSV path."""
    if choice is None:
        return build_initial(cfg.initial(), grid, cfg.n)
    T = cfg["initial"]["T"]
    if choice in ("zero", "self_similar"):
        sel = InitialData(choice, T)
    elif choice.startswith("perturbed:"):
        sel = InitialData("self_similar_perturbed", T, float(choice.split(":", 1)[1]))
    else:
        if not os.path.exists(choice):
            raise FileNotFoundError(choice)
        sel = InitialData("custom", T, path=choice)
    return build_initial(sel, grid, cfg.n)


def gauge_residual(h, n=5, xi_max=2.5, margin=5):
    """Relative residual of the analytic gauge mode in the discrete ``L``, interior nodes."""
    grid = xi_grid(xi_max, h)
    x = grid.nodes
    G = np.concatenate(gauge_mode(x, n))
    r = apply_operator(G, grid, n, potential=True) - G
    mask = np.tile(x <= grid.r_max - margin * grid.h, 2)
    return float(np.linalg.norm(r[mask]) / np.linalg.norm(G[mask]))


def cmd_profile_check(cfg, args):
    h = cfg.grid.h
    res = profile_residual(residual_grid(h), d=cfg["model"]["d"])
    report = {"h": h, "profile_residual_max": res["max"], "profile_residual_l2": res["l2"],
              "gauge_residual": gauge_residual(h, cfg.n),
              "tolerances": {"profile": PROFILE_TOL, "gauge": GAUGE_TOL}}
    report["ok"] = report["profile_residual_max"] <= PROFILE_TOL and report["gauge_residual"] <= GAUGE_TOL
    if not report["ok"]:
        raise _Failure(report)
    _emit(report, args.out)


def cmd_simulate(cfg, args):
    from .solver import solve

    sc = cfg.solver()
    initial = _data(cfg, args.data, sc.grid)
    seed = args.seed if args.seed is not None else path_seed(cfg["run"]["seed"], 0)
    basis = modal_decompose(sc.grid, sc.n)
    model = NoiseModel(basis, cfg["noise"]["c"], cfg["noise"]["beta"], cfg["noise"]["modes"])
    traj, report = solve(sc, initial, seed=seed, model=model, basis=basis,
                         snapshot_stride=max(1, sc.steps // SNAPSHOTS))
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "trajectory.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "u_center"])
        for t, c in zip(traj.times, traj.central):
            w.writerow([repr(float(t)), repr(float(c))])
    with open(os.path.join(out, "snapshots.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "r", "u", "u_hat"])
        for t, u, uh in [(0.0, initial.u, initial.u_hat)] + traj.snapshots:
            for r, a, b in zip(sc.grid.nodes, u, uh):
                w.writerow([repr(float(t)), repr(float(r)), repr(float(a)), repr(float(b))])
    body = report.to_dict()
    body.pop("profile_err_history", None)
    body["seed"] = seed
    body["outcome"] = "blowup" if report.blew_up else "global"
    _emit(body, out, "report.json")


def cmd_ensemble(cfg, args):
    ec = cfg.ensemble()
    if ec.sweep:
        table = amplitude_sweep(ec)
        _emit({"sweep": table}, args.out, "sweep.json")
        return
    res = run_ensemble(ec, out_dir=args.out)
    _emit(res.to_dict())


def _noise_path(cfg, grid, t_final):
    c = cfg["noise"]["c"]
    if c == 0:
        return None
    basis = modal_decompose(grid, cfg.n)
    model = NoiseModel(basis, c, cfg["noise"]["beta"], cfg["noise"]["modes"])
    sc = cfg.solver()
    steps = int(np.ceil(t_final / sc.dt))
    return sample_convolution(model, sc.dt, steps * sc.dt, path_seed(cfg["run"]["seed"], 0))


def cmd_lp_solve(cfg, args):
    from .lp import find_T_tilde

    grid = cfg.grid
    u0 = _data(cfg, args.data, grid)
    lp = cfg.lp()
    T = cfg["initial"]["T"]
    conv = _noise_path(cfg, grid, T + lp.bracket_halfwidth)
    result = find_T_tilde(u0, conv, T, lp, phys_grid=grid, n=cfg.n)
    _emit(result.to_dict(), args.out, "lp_diagnostics.json")


def _bump_pair(grid, amp=0.1, centre=0.0):
    r = grid.nodes
    return StatePair(amp * np.exp(-(r**2 - centre) ** 2), np.zeros_like(r))


def cmd_steer(cfg, args):
    from .control import SteeringProblem, verify_steering

    sc = cfg.solver()
    grid = sc.grid
    u0 = _data(cfg, args.data, grid) if args.data else _bump_pair(grid)
    if args.target in (None, "bump"):
        u1 = _bump_pair(grid, centre=1.0)
    else:
        u1 = _data(cfg, args.target, grid)
    basis = modal_decompose(grid, cfg.n)
    report = verify_steering(SteeringProblem(u0, u1, cfg["control"]["T1"]), basis, sc)
    report["tolerance"] = STEER_TOL
    report["ok"] = "failed" not in report and report["endpoint_sup"] <= STEER_TOL
    if not report["ok"]:
        raise _Failure(report)
    _emit(report, args.out, "steer.json")


def cmd_spectrum(cfg, args):
    lp = cfg.lp()
    grid = xi_grid(lp.xi_max, lp.xi_h)
    ev = np.linalg.eigvals(similarity_operator(grid, cfg.n, potential=True))
    ev = ev[np.argsort(-ev.real)]
    nearest = ev[np.argmin(np.abs(ev - 1))]
    report = {"xi_h": grid.h, "nodes": grid.n_points,
              "eigenvalue_nearest_1": [float(nearest.real), float(nearest.imag)],
              "leading": [[float(e.real), float(e.imag)] for e in ev[:args.count]],
              "gauge_residual": gauge_residual(grid.h, cfg.n, lp.xi_max)}
    report["ok"] = report["gauge_residual"] <= GAUGE_TOL
    if not report["ok"]:
        raise _Failure(report)
    _emit(report, args.out, "spectrum.json")


COMMANDS = {
    "profile-check": (cmd_profile_check, "residual of the exact blowup profile and the gauge mode"),
    "simulate": (cmd_simulate, "one path: trajectory.csv, snapshots.csv and report.json"),
    "ensemble": (cmd_ensemble, "Monte Carlo ensemble: records.csv and manifest.json"),
    "lp-solve": (cmd_lp_solve, "blowup time from the stabilized fixed-point problem"),
    "steer": (cmd_steer, "steer between two states and verify the endpoint"),
    "spectrum": (cmd_spectrum, "leading eigenvalues of the linearized similarity operator"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wmblowup", description=__doc__.splitlines()[0],
        epilog=schema_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text, epilog=schema_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("config", nargs="?", help="INI configuration file (defaults if omitted)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration key; overrides win over the file")
        p.add_argument("--out", help="output directory")
        if name in ("simulate", "lp-solve", "steer"):
            p.add_argument("--data", help="initial data: zero, self_similar, perturbed:EPS or a CSV file")
        if name == "simulate":
            p.add_argument("--seed", type=int, help="noise seed (default: derived from run.seed)")
        if name == "steer":
            p.add_argument("--target", help="target: bump (default) or a CSV file with r, u, u_hat")
        if name == "spectrum":
            p.add_argument("--count", type=int, default=8, help="number of leading eigenvalues")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    try:
        COMMANDS[args.command][0](cfg, args)
    except _Failure as exc:
        print(json.dumps(exc.report, indent=2, default=float))
        return EXIT_FAIL
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error on {exc.filename}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
