"""Ensemble records, aggregation, reproducibility and the Wilson interval."""
import csv
import io
import json
import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from wmblowup.core import RadialGrid
from wmblowup.errors import ConfigError
from wmblowup.ensemble import (RECORD_FIELDS, EnsembleConfig, EnsembleStats, InitialData,
                               PathRecord, amplitude_sweep, build_initial, records_csv,
                               run_ensemble, run_path, wilson_interval)
from wmblowup.noise import path_seed
from wmblowup.profiles import ProfileParams, u_T
from wmblowup.solver import SolverConfig

GRID = RadialGrid.from_spacing(4.0, 1 / 64)


def _config(**kw):
    base = dict(solver=SolverConfig(GRID), paths=10, run_seed=7, amplitude=0.01,
                record_timing=False)
    base.update(kw)
    return EnsembleConfig(**base)


# Wilson interval

@given(st.integers(1, 500), st.data())
@settings(max_examples=60, deadline=None)
def test_wilson_endpoints_solve_score_equation(n, data):
    # Derived oracle: the endpoints are the roots of (k/n - p)^2 = z^2 p (1 - p) / n.
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    z = stats.norm.ppf(0.975)
    p_hat = k / n

    def score(p):
        return (p_hat - p) ** 2 - z * z * p * (1 - p) / n

    assert 0 <= lo <= p_hat <= hi <= 1
    if k > 0:
        assert lo == pytest.approx(optimize.brentq(score, 0, min(p_hat, 1 - 1e-12)), abs=1e-10)
    else:
        assert lo == 0
    if k < n:
        assert hi == pytest.approx(optimize.brentq(score, max(p_hat, 1e-12), 1), abs=1e-10)
    else:
        assert hi == 1


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
def test_wilson_coverage_against_binomial(p):
    # Derived oracle: exact coverage from the binomial pmf stays near the nominal 95%.
    n = 200
    k = np.arange(n + 1)
    covered = np.array([lo <= p <= hi for lo, hi in (wilson_interval(int(j), n) for j in k)])
    coverage = stats.binom.pmf(k, n, p)[covered].sum()
    assert 0.93 <= coverage <= 0.97


def test_wilson_validation():
    with pytest.raises(ValueError):
        wilson_interval(0, 0)
    with pytest.raises(ValueError):
        wilson_interval(5, 4)


# initial data

def test_initial_data_selectors():
    with pytest.raises(ConfigError):
        InitialData("gaussian")
    with pytest.raises(ConfigError):
        InitialData(shape="ring")
    with pytest.raises(ConfigError):
        InitialData("custom")
    u, uh = u_T(0.0, GRID.nodes, ProfileParams(3, 1.0))
    exact = build_initial(InitialData(), GRID)
    assert np.array_equal(exact.u, u) and np.array_equal(exact.u_hat, uh)
    scaled = build_initial(InitialData("self_similar_perturbed", eps=0.1, shape="scale"), GRID)
    assert np.allclose(scaled.u, 1.1 * u, rtol=1e-14)
    bump = build_initial(InitialData("self_similar_perturbed", eps=0.1), GRID)
    assert np.allclose(bump.u - u, 0.1 * u[0] * np.exp(-GRID.nodes**2), atol=1e-14)
    assert not np.any(build_initial(InitialData("zero"), GRID).u)


def test_custom_csv_round_trip(tmp_path):
    src = RadialGrid.from_spacing(4.0, 1 / 32)
    u = np.exp(-src.nodes**2)
    path = tmp_path / "data.csv"
    np.savetxt(path, np.column_stack([src.nodes, u, 0 * u]), delimiter=",",
               header="r,u,u_hat", comments="")
    got = build_initial(InitialData("custom", path=str(path)), GRID)
    assert np.max(np.abs(got.u - np.exp(-GRID.nodes**2))) < 1e-4
    assert not np.any(got.u_hat)
    bad = tmp_path / "bad.csv"
    np.savetxt(bad, np.column_stack([src.nodes**2, u, 0 * u]), delimiter=",",
               header="r,u,u_hat", comments="")
    with pytest.raises(ConfigError):
        build_initial(InitialData("custom", path=str(bad)), GRID)


def test_config_validation():
    with pytest.raises(ConfigError):
        _config(paths=0)
    with pytest.raises(ConfigError):
        _config(horizon=2.0)
    with pytest.raises(ConfigError):
        _config(amplitude=-1.0)
    with pytest.raises(ConfigError):
        _config(workers=0)


# ensembles

def test_zero_data_without_noise_never_blows_up():
    res = run_ensemble(_config(initial=InitialData("zero"), amplitude=0.0))
    assert res.blowup_fraction == 0 and res.blowups == 0 and res.errors == 0
    assert res.interval[0] == 0
    rows = {tuple(r.row()[2:]) for r in res.records}
    assert len(rows) == 1


def test_exact_data_always_blows_up():
    res = run_ensemble(_config())
    assert res.blowup_fraction == 1
    for r in res.records:
        assert r.T_hat == pytest.approx(1.0, abs=0.01)
        assert r.t_exit < 1.0
    assert res.T_hat_hist["min"] <= res.T_hat_hist["mean"] <= res.T_hat_hist["max"]
    assert sum(res.T_hat_hist["counts"]) == 10


def test_horizon_decides_the_outcome():
    late = run_ensemble(_config(paths=2, horizon=0.5))
    assert late.blowup_fraction == 0


def test_records_are_byte_reproducible(tmp_path):
    cfg = _config(paths=6)
    a, b = tmp_path / "a", tmp_path / "b"
    run_ensemble(cfg, out_dir=str(a))
    run_ensemble(cfg, out_dir=str(b))
    assert (a / "records.csv").read_bytes() == (b / "records.csv").read_bytes()
    assert not (a / "records.partial.csv").exists()


def test_paths_depend_only_on_their_index():
    cfg = _config(paths=6)
    full = run_ensemble(cfg).records
    for i in (5, 2, 0):
        alone = run_path(cfg, i)
        assert alone.row() == full[i].row()
        assert alone.seed == path_seed(cfg.run_seed, i)


def test_workers_do_not_change_records():
    cfg = _config(paths=4)
    serial = records_csv(run_ensemble(cfg).records)
    pooled = records_csv(run_ensemble(replace(cfg, workers=2)).records)
    assert serial == pooled


def test_records_and_manifest(tmp_path):
    cfg = _config(paths=3)
    run_ensemble(cfg, out_dir=str(tmp_path))
    with open(tmp_path / "records.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == RECORD_FIELDS
    assert [int(r["path_id"]) for r in rows] == [0, 1, 2]
    assert all(r["outcome"] == "blowup" and r["wall_ms"] == "0.000" for r in rows)
    with open(tmp_path / "manifest.json") as fh:
        man = json.load(fh)
    assert man["config"]["paths"] == 3
    assert man["config"]["solver"]["grid"] == {"r_max": 4.0, "n_points": GRID.n_points}
    assert len(man["grid_checksum"]) == 16 and man["basis_checksum"]
    assert man["stats"]["blowups"] == 3


def test_failures_are_recorded_as_errors(tmp_path):
    cfg = _config(paths=2, initial=InitialData("custom", path=str(tmp_path / "missing.csv")))
    res = run_ensemble(cfg)
    assert [r.outcome for r in res.records] == ["error", "error"]
    assert res.errors == 2 and res.blowup_fraction == 0


def test_stats_from_synthetic_records():
    recs = [PathRecord(i, i, o, T_hat=1.0 + 0.01 * i, profile_err_final=0.1 * i,
                       profile_err_history=[(0.5, 3.0), (0.75, 2.0), (0.875, 1.0 + (i == 1) * 5)])
            for i, o in enumerate(["blowup", "blowup", "global", "error"])]
    res = EnsembleStats.from_records(recs)
    assert res.blowups == 2 and res.errors == 1 and res.blowup_fraction == 0.5
    assert res.interval == wilson_interval(2, 4)
    assert res.discrepancy["decreasing_fraction"] == 0.5
    assert res.discrepancy["max"] == pytest.approx(0.1)
    header = records_csv(recs).splitlines()[0]
    assert header == ",".join(RECORD_FIELDS)


def test_amplitude_sweep_zero_row():
    cfg = _config(paths=3, initial=InitialData("zero"))
    table = amplitude_sweep(cfg, [0.0])
    assert table == [{"amplitude": 0.0, "fraction": 0.0, "wilson_95": list(wilson_interval(0, 3)),
                      "paths": 3}]
    with pytest.raises(ConfigError):
        amplitude_sweep(cfg)


def test_record_row_round_trips_floats():
    rec = PathRecord(1, 2, "blowup", t_exit=0.1 + 0.2, T_hat=1 / 3)
    row = next(csv.reader(io.StringIO(records_csv([rec])).readlines()[1:]))
    assert float(row[3]) == rec.t_exit and float(row[4]) == rec.T_hat
    assert os.linesep not in row[-1]


def test_timing_is_opt_in():
    timed = run_path(_config(record_timing=True), 0)
    assert timed.wall_ms > 0
    assert run_path(_config(), 0).wall_ms == 0
