"""Monte Carlo ensembles of noisy solves.

Every path gets its own seed ``path_seed(run_seed, index)``, so a record
depends only on the configuration and its index, never on scheduling. Paths
run in a process pool; the parent is the only writer. Records are appended
to ``records.partial.csv`` as they complete and rewritten in index order to
``records.csv`` at the end.
"""
import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import stats

from .core import RadialGrid, StatePair, modal_decompose
from .errors import ConfigError
from .noise import NoiseModel, path_seed
from .profiles import ProfileParams, u_T
from .similarity import even_spline
from .solver import SolverConfig, solve

__all__ = [
    "InitialData",
    "EnsembleConfig",
    "PathRecord",
    "EnsembleStats",
    "wilson_interval",
    "build_initial",
    "run_path",
    "run_ensemble",
    "amplitude_sweep",
    "measure_scaling",
    "RECORD_FIELDS",
]

log = logging.getLogger(__name__)

RECORD_FIELDS = ("path_id", "seed", "outcome", "t_exit", "T_hat", "profile_err_final",
                 "sup_amp", "exit_norm_s", "exit_norm_k", "wall_ms")
_KINDS = ("zero", "self_similar", "self_similar_perturbed", "custom")


@dataclass(frozen=True)
class InitialData:
    """Initial-data selector.

    ``self_similar_perturbed`` adds ``eps * Phi(0)/T * shape`` to ``u_T(0)``,
    where ``shape`` is ``bump`` (``exp(-r^2)`` in the field) or ``scale``
    (the profile itself, i.e. ``(1 + eps) u_T(0)``). ``custom`` reads a CSV
    with columns ``r, u, u_hat``.
    """

    kind: str = "self_similar"
    T: float = 1.0
    eps: float = 0.0
    shape: str = "bump"
    path: str = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"initial kind must be one of {_KINDS}, got {self.kind!r}")
        if self.shape not in ("bump", "scale"):
            raise ConfigError(f"unknown perturbation shape {self.shape!r}")
        if self.kind == "custom" and not self.path:
            raise ConfigError("custom initial data need a path")


def _read_custom(path, grid):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ConfigError(f"{path}: expected columns r, u, u_hat")
    src = RadialGrid(float(data[-1, 0] + data[0, 0]), data.shape[0])
    if not np.allclose(src.nodes, data[:, 0], rtol=1e-9, atol=1e-12):
        raise ConfigError(f"{path}: radii must be the cell centers of a uniform grid")
    r = np.minimum(grid.nodes, src.nodes[-1])
    return StatePair(even_spline(src, data[:, 1])(r), even_spline(src, data[:, 2])(r))


def build_initial(sel, grid, n=5):
    """Grid samples of the selected initial data."""
    r = grid.nodes
    if sel.kind == "zero":
        return StatePair.zeros(grid.n_points)
    if sel.kind == "custom":
        return _read_custom(sel.path, grid)
    params = ProfileParams(n - 2, sel.T)
    u, uh = u_T(0.0, r, params)
    if sel.kind == "self_similar_perturbed" and sel.eps:
        if sel.shape == "scale":
            u = (1 + sel.eps) * u
        else:
            u = u + sel.eps * u[0] * np.exp(-r**2)
    return StatePair(u, uh)


@dataclass(frozen=True)
class EnsembleConfig:
    """Monte Carlo settings.

    Parameters
    ----------
    solver : SolverConfig
    paths : int
    run_seed : int
    horizon : float
        Blowup counts only if detected before this time; must not exceed ``solver.t_final``.
    initial : InitialData
    amplitude, beta, modes : float, float, int
        Noise model.
    sweep : tuple of float, optional
        Noise amplitudes for :func:`amplitude_sweep`.
    workers : int
    record_timing : bool
        Measure ``wall_ms``. Off by default: ``wall_ms = 0`` keeps record files
        byte-reproducible.
    """

    solver: SolverConfig
    paths: int = 200
    run_seed: int = 0
    horizon: float = 1.5
    initial: InitialData = InitialData()
    amplitude: float = 0.01
    beta: float = 11.0
    modes: int = 64
    sweep: tuple = None
    workers: int = 1
    record_timing: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ConfigError("paths must be at least 1")
        if self.horizon > self.solver.t_final + 1e-12:
            raise ConfigError(f"horizon {self.horizon} exceeds t_final {self.solver.t_final}")
        if self.amplitude < 0:
            raise ConfigError("noise amplitude must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def echo(self):
        out = asdict(self)
        out["solver"] = {k: v for k, v in out["solver"].items() if k not in ("grid", "order")}
        out["solver"]["grid"] = {"r_max": self.solver.grid.r_max,
                                 "n_points": self.solver.grid.n_points}
        out["solver"]["order"] = {"s": self.solver.order.s, "k": self.solver.order.k}
        return out


@dataclass
class PathRecord:
    path_id: int
    seed: int
    outcome: str
    t_exit: float = float("nan")
    T_hat: float = float("nan")
    profile_err_final: float = float("nan")
    sup_amp: float = float("nan")
    exit_norm_s: float = float("nan")
    exit_norm_k: float = float("nan")
    wall_ms: float = 0.0
    profile_err_history: list = field(default_factory=list, repr=False)

    def row(self):
        def fmt(x):
            return repr(float(x))
        return [str(self.path_id), str(self.seed), self.outcome, fmt(self.t_exit),
                fmt(self.T_hat), fmt(self.profile_err_final), fmt(self.sup_amp),
                fmt(self.exit_norm_s), fmt(self.exit_norm_k), f"{self.wall_ms:.3f}"]


def wilson_interval(k, n, confidence=0.95):
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@lru_cache(maxsize=4)
def _basis(grid, n):
    return modal_decompose(grid, n)


def run_path(config, index):
    """Solve one path; failures become ``outcome = "error"`` records."""
    seed = path_seed(config.run_seed, index)
    start = time.perf_counter()
    try:
        sc = config.solver
        basis = _basis(sc.grid, sc.n)
        model = NoiseModel(basis, config.amplitude, config.beta, config.modes)
        initial = build_initial(config.initial, sc.grid, sc.n)
        _, rep = solve(sc, initial, seed=seed, model=model, basis=basis)
        blew = rep.blew_up and rep.t_exit < config.horizon
        rec = PathRecord(index, seed, "blowup" if blew else "global", rep.t_exit, rep.T_hat,
                         rep.profile_err_final, rep.sup_amp,
                         rep.exit_norms.get("s", np.nan), rep.exit_norms.get("k", np.nan),
                         profile_err_history=list(rep.profile_err_history))
    except Exception as exc:  # recorded, never fatal for the ensemble
        log.warning("path %d failed: %s", index, exc)
        rec = PathRecord(index, seed, "error")
    if config.record_timing:
        rec.wall_ms = 1e3 * (time.perf_counter() - start)
    return rec


def _run_chunk(args):
    config, indices = args
    return [run_path(config, i) for i in indices]


@dataclass
class EnsembleStats:
    records: list = field(repr=False)
    blowup_fraction: float = 0.0
    interval: tuple = (0.0, 1.0)
    blowups: int = 0
    errors: int = 0
    T_hat_hist: dict = field(default_factory=dict)
    discrepancy: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records, bins=20):
        n = len(records)
        k = sum(r.outcome == "blowup" for r in records)
        errors = sum(r.outcome == "error" for r in records)
        that = np.array([r.T_hat for r in records if r.outcome == "blowup" and np.isfinite(r.T_hat)])
        hist = {}
        if that.size:
            counts, edges = np.histogram(that, bins=bins)
            hist = {"counts": counts.tolist(), "edges": edges.tolist(),
                    "min": float(that.min()), "max": float(that.max()),
                    "mean": float(that.mean())}
        errs = np.array([r.profile_err_final for r in records
                         if r.outcome == "blowup" and np.isfinite(r.profile_err_final)])
        decreasing = [all(b[1] < a[1] for a, b in zip(h[-3:], h[-2:]))
                      for h in (r.profile_err_history for r in records if r.outcome == "blowup")
                      if len(h) >= 3]
        disc = {}
        if errs.size:
            disc = {"median": float(np.median(errs)), "max": float(errs.max())}
        if decreasing:
            disc["decreasing_fraction"] = float(np.mean(decreasing))
        return cls(records, k / n, wilson_interval(k, n), k, errors, hist, disc)

    def to_dict(self):
        return {"paths": len(self.records), "blowups": self.blowups, "errors": self.errors,
                "blowup_fraction": self.blowup_fraction, "wilson_95": list(self.interval),
                "T_hat": self.T_hat_hist, "profile_discrepancy": self.discrepancy,
                "note": "fractions are measurements of this discretization, not predictions"}


def _write_records(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow(r.row())


def records_csv(records):
    buf = io.StringIO()
    _write_records(records, buf)
    return buf.getvalue()


def _chunks(paths, workers):
    size = max(1, min(16, paths // (4 * workers) or 1))
    return [list(range(i, min(i + size, paths))) for i in range(0, paths, size)]


def run_ensemble(config, out_dir=None):
    """Run all paths and aggregate.

    With ``out_dir`` the records are streamed to ``records.partial.csv`` in
    completion order, then written sorted to ``records.csv`` next to
    ``manifest.json``; the partial file is removed on success.
    """
    partial = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        partial = open(os.path.join(out_dir, "records.partial.csv"), "w", encoding="utf-8",
                       newline="")
        csv.writer(partial, lineterminator="\n").writerow(RECORD_FIELDS)
    records = []

    def collect(batch):
        records.extend(batch)
        if partial is not None:
            w = csv.writer(partial, lineterminator="\n")
            for r in batch:
                w.writerow(r.row())
            partial.flush()

    try:
        if config.workers == 1:
            for chunk in _chunks(config.paths, 1):
                collect(_run_chunk((config, chunk)))
        else:
            with ProcessPoolExecutor(config.workers) as pool:
                futures = [pool.submit(_run_chunk, (config, c))
                           for c in _chunks(config.paths, config.workers)]
                for fut in as_completed(futures):
                    collect(fut.result())
    finally:
        if partial is not None:
            partial.close()
    records.sort(key=lambda r: r.path_id)
    result = EnsembleStats.from_records(records)
    if out_dir is not None:
        with open(os.path.join(out_dir, "records.csv"), "w", encoding="utf-8", newline="") as fh:
            _write_records(records, fh)
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest(config, result), fh, indent=2)
        os.remove(os.path.join(out_dir, "records.partial.csv"))
    return result


def manifest(config, result):
    from . import __version__

    grid = config.solver.grid
    basis = _basis(grid, config.solver.n)
    return {
        "config": config.echo(),
        "version": __version__,
        "grid_checksum": hashlib.sha256(grid.nodes.tobytes()).hexdigest()[:16],
        "basis_checksum": basis.checksum(),
        "stats": result.to_dict(),
    }


def amplitude_sweep(config, amplitudes=None):
    """Blowup fraction for each noise amplitude; monotonicity is not assumed."""
    amps = amplitudes if amplitudes is not None else config.sweep
    if not amps:
        raise ConfigError("no sweep amplitudes given")
    table = []
    for c in amps:
        res = run_ensemble(replace(config, amplitude=float(c)))
        table.append({"amplitude": float(c), "fraction": res.blowup_fraction,
                      "wilson_95": list(res.interval), "paths": len(res.records)})
    return table


def measure_scaling(config, workers=(1, 2, 4, 8)):
    """Wall time of :func:`run_ensemble` per worker count, capped at the usable cores."""
    cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    _basis(config.solver.grid, config.solver.n)
    rows = []
    for p in workers:
        if p > cores:
            break
        start = time.perf_counter()
        run_ensemble(replace(config, workers=p))
        rows.append({"workers": p, "seconds": time.perf_counter() - start})
    base = rows[0]["seconds"]
    for row in rows:
        row["speedup"] = base / row["seconds"]
    return {"cores": cores, "rows": rows}
