"""Leapfrog stepping, blowup detection and the Picard mild-solution oracle."""
from dataclasses import replace

import numpy as np
import pytest

from wmblowup.core import RadialGrid, StatePair, modal_decompose
from wmblowup.errors import ContractionError, DivergenceError, DomainError
from wmblowup.noise import NoiseModel, sample_convolution
from wmblowup.profiles import u_T
from wmblowup.solver import SolverConfig, picard_mild_solve, solve, step


def _bump(grid, amp=0.1, support=1.0):
    r = grid.nodes
    return StatePair(amp * np.where(r < support, (1 - (r / support) ** 2) ** 4, 0.0), 0 * r)


def test_config_validation(grid64):
    for kw in ({"dt_factor": 0.0}, {"dt_factor": 1.5}, {"mode": "rk4"},
               {"amp_threshold": -1.0}, {"norm_threshold": 0.0}):
        with pytest.raises(DomainError):
            SolverConfig(grid64, **kw)
    cfg = SolverConfig(grid64, dt_factor=0.5)
    assert cfg.dt == pytest.approx(grid64.h / 2)
    assert cfg.threshold == pytest.approx(min(2e3, 2 / (10 * cfg.dt)))


def test_zero_data_stays_zero(grid64):
    cfg = SolverConfig(grid64, t_final=0.5)
    z = StatePair.zeros(grid64.n_points)
    assert step(z, 0.0, cfg.dt, cfg).u.tolist() == z.u.tolist()
    traj, report = solve(cfg, z)
    assert not report.blew_up and report.t_exit == pytest.approx(cfg.steps * cfg.dt)
    assert np.all(traj.final.u == 0) and np.all(traj.final.u_hat == 0)


def test_step_reports_divergence(grid64):
    cfg = SolverConfig(grid64)
    bad = StatePair(np.full(grid64.n_points, 1e200), np.zeros(grid64.n_points))
    with pytest.raises(DivergenceError) as info:
        step(bad, 0.25, cfg.dt, cfg)
    assert info.value.time == pytest.approx(0.25 + cfg.dt)


def test_initial_mismatch(grid64):
    with pytest.raises(DomainError):
        solve(SolverConfig(grid64), StatePair.zeros(3))


def _mode_error(dt_factor, basis):
    grid = basis.grid
    k = 3
    e = basis.eigenvectors[:, k]
    w = np.sqrt(basis.eigenvalues[k])
    cfg = SolverConfig(grid, dt_factor=dt_factor, t_final=2 * np.pi / w, nonlinear=False,
                       amp_threshold=1e6)
    traj, _ = solve(cfg, StatePair(e, 0 * e))
    exact = np.cos(w * traj.times[-1]) * e
    return np.max(np.abs(traj.final.u - exact)) / np.max(np.abs(e))


def test_single_mode_harmonic(basis64):
    """Derived oracle: cos(omega t) e_k over one period, second order in dt."""
    e1, e2 = _mode_error(0.5, basis64), _mode_error(0.25, basis64)
    assert e1 < 1e-5
    assert e1 / e2 >= 3.5


def test_second_order_against_refined_reference(grid64):
    init = _bump(grid64, 0.5)

    def final(f):
        cfg = SolverConfig(grid64, dt_factor=f, t_final=0.5, amp_threshold=1e6)
        return solve(cfg, init)[0].final.u

    ref = final(0.5 / 16)
    e1 = np.max(np.abs(final(0.5) - ref))
    e2 = np.max(np.abs(final(0.25) - ref))
    assert e1 / e2 >= 3.5


def test_finite_speed_of_propagation():
    """Support r <= 1 spreads at unit speed; outside the cone only decaying mass-matrix tails remain."""
    grid = RadialGrid.from_spacing(4.0, 1 / 128)
    init = _bump(grid)
    cfg = SolverConfig(grid, t_final=1.0, amp_threshold=1e6)
    traj, _ = solve(cfg, init)
    r = grid.nodes
    u = np.abs(traj.final.u)
    t = traj.times[-1]
    assert np.max(u[r > 1 + t + 2 * grid.h]) <= 1e-6 * np.max(u)
    assert np.max(u[r > 1 + t + 0.25]) <= 1e-15 * np.max(u)


def test_linear_energy_conservation():
    grid = RadialGrid.from_spacing(8.0, 1 / 256)
    cfg = SolverConfig(grid, t_final=5.0, nonlinear=False, amp_threshold=1e6)
    traj, _ = solve(cfg, _bump(grid), track_energy=True)
    assert np.max(np.abs(traj.energy / traj.energy[0] - 1)) < 1e-3


def test_self_similar_data_blow_up(grid256):
    """The exact blowup solution with T = 1 is the oracle."""
    init = StatePair(*u_T(0.0, grid256.nodes))
    traj, report = solve(SolverConfig(grid256), init)
    assert report.blew_up and report.trigger == "amplitude"
    assert report.t_exit < 1.5
    assert abs(report.T_hat - 1) <= 0.01
    assert report.t_exit < report.T_hat <= report.t_exit + 10 * SolverConfig(grid256).dt
    assert len(report.profile_err_history) >= 3


def test_perturbed_self_similar_data(grid256):
    u, uh = u_T(0.0, grid256.nodes)
    init = StatePair(u * (1 + 1e-3 * np.exp(-grid256.nodes**2)), uh)
    _, report = solve(SolverConfig(grid256), init)
    assert report.blew_up and abs(report.T_hat - 1) <= 0.05


def test_deterministic_reports(basis64):
    grid = basis64.grid
    model = NoiseModel(basis64, 0.5, 11.0, 16)
    cfg = SolverConfig(grid, t_final=0.5, amp_threshold=1e6)
    a = solve(cfg, _bump(grid), seed=17, model=model)[1].to_dict()
    b = solve(cfg, _bump(grid), seed=17, model=model)[1].to_dict()
    assert a == b


@pytest.mark.parametrize("h", [1 / 64, 1 / 128])
def test_direct_and_dpd_agree(h):
    """Derived oracle: the two forms see one noise path and differ by O(dt)."""
    grid = RadialGrid.from_spacing(4.0, h)
    basis = modal_decompose(grid, 5)
    model = NoiseModel(basis, 0.5, 11.0, 32)
    cfg = SolverConfig(grid, t_final=1.0, amp_threshold=1e6)
    init = StatePair(0.2 * np.exp(-grid.nodes**2), 0 * grid.nodes)
    conv = sample_convolution(model, cfg.dt, cfg.steps * cfg.dt, seed=4)
    direct, _ = solve(cfg, init, model=model, conv=conv)
    dpd, _ = solve(replace(cfg, mode="dpd"), init, model=model, conv=conv)
    diff = np.max(np.abs(direct.final.u - dpd.final.u))
    assert diff <= 0.5 * cfg.dt * np.max(np.abs(conv.physical_step(-1)[0]))


def test_deterministic_forcing_requires_dpd(basis64):
    from wmblowup.control import z_from_forcing

    grid = basis64.grid
    cfg = SolverConfig(grid, t_final=0.25, amp_threshold=1e6)
    times = np.arange(cfg.steps + 1) * cfg.dt
    conv = z_from_forcing(np.zeros((times.size, grid.n_points)), times, basis64)
    with pytest.raises(DomainError):
        solve(cfg, _bump(grid), conv=conv)
    traj, _ = solve(replace(cfg, mode="dpd"), _bump(grid), conv=conv)
    ref, _ = solve(cfg, _bump(grid))
    assert np.allclose(traj.final.u, ref.final.u, atol=1e-15)


def test_picard_zero(basis64):
    state, info = picard_mild_solve(StatePair.zeros(basis64.size), None, 0.05, 5, basis64, 0.05 / 8)
    assert info["iterations"] == 1
    assert np.all(state.u == 0) and np.all(state.u_hat == 0)


def test_picard_contracts(basis64):
    r = basis64.grid.nodes
    init = StatePair(0.5 * np.exp(-r**2), 0 * r)
    _, info = picard_mild_solve(init, None, 0.05, 30, basis64, 0.05 / 16)
    assert info["factors"] and max(info["factors"]) <= 0.5


def test_picard_rejects_bad_span(basis64):
    with pytest.raises(DomainError):
        picard_mild_solve(StatePair.zeros(basis64.size), None, 0.05, 5, basis64, 0.03)


def test_picard_reports_non_contraction(basis256):
    r = basis256.grid.nodes
    big = StatePair(60.0 * np.exp(-r**2), 0 * r)
    with pytest.raises(ContractionError) as info:
        picard_mild_solve(big, None, 1.0, 30, basis256, 1 / 64, max_factor=0.9)
    assert len(info.value.factors) >= 3


def test_picard_matches_leapfrog(basis256):
    """Derived oracle: two discretizations of the same mild solution on [0, 0.1]."""
    grid = basis256.grid
    r = grid.nodes
    init = StatePair(0.5 * np.exp(-r**2), 0.2 * np.exp(-r**2))
    model = NoiseModel(basis256, 0.05, 11.0, 64)
    cfg = SolverConfig(grid, t_final=0.1, mode="dpd", amp_threshold=1e6)
    conv = sample_convolution(model, cfg.dt, cfg.steps * cfg.dt, seed=8)
    traj, _ = solve(cfg, init, model=model, conv=conv)
    state, _ = picard_mild_solve(init, conv, cfg.steps * cfg.dt, 40, basis256, cfg.dt)
    w_leap = traj.final.u - conv.physical_step(cfg.steps)[0]
    assert np.max(np.abs(state.u - w_leap)) <= max(cfg.dt**2, 1e-4)
