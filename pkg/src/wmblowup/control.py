"""Steering between two states with a synthesized forcing path.

Given data ``(u0, u0_hat)``, a target ``(u1, u1_hat)`` and a horizon ``T1``,
an explicit trajectory ``u(t)`` joining them is built from cubic Hermite
weights in ``s = t / T1`` together with the resolvent ``R = (I - Delta)^-1``
and the semigroup ``p(s) = exp(s (Delta - I))``. All operators are diagonal in
the modal basis, so each mode is a scalar formula.

The forcing ``f`` that makes ``u`` a solution of ``u_tt = Delta u + n0(u) + f_t``
is read off from the trajectory. The linear wave driven by ``f_t`` from rest
gives a path ``z``; then ``w = u - z`` solves ``w_tt = Delta w + n0(w + z)``
from ``(u0, u0_hat)`` and ``w(T1) + z(T1) = u1``. :func:`verify_steering`
re-solves for ``w`` with the dpd solver and measures how well the target is hit.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .core import StatePair, laplacian_apply, sobolev_norm
from .errors import DivergenceError, DomainError, ShapeError
from .noise import ConvolutionPath, NoisePath
from .physics import NonlinearityContext, n0
from .solver import solve

__all__ = [
    "SteeringProblem",
    "SteeringTrajectory",
    "hermite_weights",
    "steering_state",
    "forcing_from_state",
    "z_from_forcing",
    "verify_steering",
]


@dataclass(frozen=True)
class SteeringProblem:
    """Initial pair ``u0``, target pair ``u1`` and horizon ``T1``."""

    u0: StatePair
    u1: StatePair
    T1: float = 1.0

    def __post_init__(self):
        if not self.T1 > 0:
            raise DomainError(f"T1 must be positive, got {self.T1}")
        if len(self.u0) != len(self.u1):
            raise ShapeError("u0 and u1 live on different grids")


@dataclass
class SteeringTrajectory:
    """Samples of the steering path at ``times``; arrays have shape ``(len(times), N)``."""

    times: np.ndarray
    u: np.ndarray = field(repr=False)
    u_hat: np.ndarray = field(repr=False)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def hermite_weights(s, lam):
    """Per-mode weights of the steering formula at normalized time ``s``.

    Parameters
    ----------
    s : float
        ``t / T1`` in ``[0, 1]``.
    lam : ndarray
        Eigenvalues of ``-Delta``.

    Returns
    -------
    (h0, h1, a, b), (dh0, dh1, da, db)
        Values and ``s``-derivatives of the weights of ``u0``, ``u1``,
        ``u0_hat`` and ``u1_hat``. The velocity weights are normalized so
        that ``a'(0) = 1`` and ``b'(1) = 1``.
    """
    lam = np.asarray(lam, dtype=float)
    rho = 1.0 / (1.0 + lam)
    p1 = np.exp(-1.0 / rho)

    def a_val(x):
        px = np.exp(-x / rho)
        c = rho - rho**2 + rho**2 * p1
        return -x**2 * (3 - 2 * x) * c - rho * ((1 - x) * px - 1 - rho * px + rho)

    def a_der(x):
        px = np.exp(-x / rho)
        c = rho - rho**2 + rho**2 * p1
        return (1 - x) * px - 6 * x * (1 - x) * c

    h0 = 1 + 2 * s**3 - 3 * s**2
    h1 = s**2 * (3 - 2 * s)
    dh1 = 6 * s * (1 - s)
    values = (np.full_like(lam, h0), np.full_like(lam, h1), a_val(s), -a_val(1 - s))
    derivs = (np.full_like(lam, -dh1), np.full_like(lam, dh1), a_der(s), a_der(1 - s))
    return values, derivs


def steering_state(problem, basis, steps):
    """Steering trajectory on ``steps + 1`` uniform times in ``[0, T1]``.

    The horizon is handled by working in ``s = t / T1``; the velocity weights
    carry a factor ``T1`` so that ``u_t`` matches the prescribed velocities.
    """
    if steps < 1:
        raise DomainError("steps must be positive")
    T1 = problem.T1
    lam = basis.eigenvalues
    c = basis.coefficients(np.stack([problem.u0.u, problem.u1.u,
                                     problem.u0.u_hat, problem.u1.u_hat]))
    times = np.linspace(0.0, T1, steps + 1)
    U = np.empty((steps + 1, lam.size))
    Uh = np.empty_like(U)
    for i, t in enumerate(times):
        (h0, h1, a, b), (dh0, dh1, da, db) = hermite_weights(t / T1, lam)
        U[i] = h0 * c[0] + h1 * c[1] + T1 * (a * c[2] + b * c[3])
        Uh[i] = (dh0 * c[0] + dh1 * c[1]) / T1 + da * c[2] + db * c[3]
    return SteeringTrajectory(times, basis.synthesize(U), basis.synthesize(Uh))


def forcing_from_state(traj, grid, n=5):
    """``f(t) = u_hat(t) - u_hat(0) - int_0^t (Delta u + n0(u)) ds`` by the trapezoidal rule."""
    ctx = NonlinearityContext(n)
    rhs = laplacian_apply(traj.u, grid, n) + n0(traj.u, grid, ctx)
    dt = np.diff(traj.times)[:, None]
    integral = np.zeros_like(traj.u)
    integral[1:] = np.cumsum(0.5 * dt * (rhs[1:] + rhs[:-1]), axis=0)
    f = traj.u_hat - traj.u_hat[0] - integral
    f[0] = 0.0
    return f


def z_from_forcing(f, times, basis):
    """Linear wave ``z_tt = Delta z + f_t`` from rest, exact per mode for piecewise-linear ``f``.

    Returns a :class:`ConvolutionPath` (with an empty noise record) that the
    dpd solver accepts in place of a stochastic convolution.
    """
    times = np.asarray(times, dtype=float)
    dts = np.diff(times)
    dt = float(dts[0])
    if not np.allclose(dts, dt, rtol=1e-10, atol=1e-14):
        raise DomainError("forcing must be sampled at a uniform stride")
    if np.max(np.abs(f[0])) > 0:
        raise DomainError("forcing must vanish at t = 0")
    F = basis.coefficients(f)
    omega = np.sqrt(basis.eigenvalues)
    x = omega * dt
    cos, sinc = np.cos(x), np.sinc(x / np.pi)
    half = 0.5 * dt * dt * np.sinc(x / (2 * np.pi)) ** 2   # (1 - cos x) / omega^2
    steps = len(times) - 1
    z = np.zeros((steps + 1, omega.size))
    zh = np.zeros_like(z)
    for j in range(steps):
        rate = (F[j + 1] - F[j]) / dt
        z[j + 1] = cos * z[j] + dt * sinc * zh[j] + half * rate
        zh[j + 1] = -omega * np.sin(x) * z[j] + cos * zh[j] + dt * sinc * rate
    record = NoisePath(dt, steps, 0, np.zeros((0, 3, steps)))
    return ConvolutionPath(basis, record, z, zh)


def _shift_path(conv, bump, eta):
    # z + eta (t/T1) bump keeps z(0) = 0 and z_hat = d/dt z
    T1 = conv.t_final
    c = conv.basis.coefficients(bump)
    t = np.arange(conv.noise.steps + 1)[:, None] * conv.dt
    return ConvolutionPath(conv.basis, conv.noise, conv.z + eta * (t / T1) * c,
                           conv.z_hat + eta / T1 * c)


def _endpoint(config, u0, conv):
    traj, report = solve(config, u0, conv=conv)
    if report.blew_up:
        raise DivergenceError("steered solution left the resolvable range", report.t_exit)
    return traj.final


def verify_steering(problem, basis, config, sizes=(1e-2, 1e-3, 1e-4), bump=None, modes=64):
    """Re-solve for ``w`` along the synthesized path and report the endpoint error.

    Parameters
    ----------
    config : SolverConfig
        Its ``t_final`` is replaced by ``T1`` and ``mode`` by ``dpd``.
    sizes : sequence of float
        Perturbation sizes of the continuity table.
    bump : ndarray, optional
        Perturbation shape; defaults to ``exp(-r^2)``.
    modes : int
        Modal cutoff of the Sobolev surrogate of the endpoint error.

    Returns
    -------
    dict
        ``endpoint_sup`` (field), ``endpoint_sup_hat`` (velocity),
        ``endpoint_sobolev`` and the ``continuity`` table, or
        ``{"failed": ...}`` when the solver diverges.
    """
    grid = basis.grid
    cfg = replace(config, t_final=problem.T1, mode="dpd", amp_threshold=1e6)
    steps = cfg.steps
    if abs(steps * cfg.dt - problem.T1) > 1e-9:
        raise DomainError(f"T1 = {problem.T1} is not a multiple of dt = {cfg.dt}")
    traj = steering_state(problem, basis, steps)
    f = forcing_from_state(traj, grid, cfg.n)
    conv = z_from_forcing(f, traj.times, basis)
    if bump is None:
        bump = np.exp(-grid.nodes**2)
    try:
        end = _endpoint(cfg, problem.u0, conv)
    except DivergenceError as exc:
        return {"failed": f"solver diverged at t = {exc.time:.6g}"}
    diff = end - problem.u1
    _, sob = sobolev_norm(diff, cfg.order, basis, modes=modes)
    table = []
    for eta in sizes:
        row = {"size": float(eta)}
        for name in ("u0", "z"):
            shifts = []
            for e in (eta, eta / 2):
                if name == "u0":
                    pert = _endpoint(cfg, problem.u0 + StatePair(e * bump, 0 * bump), conv)
                else:
                    pert = _endpoint(cfg, problem.u0, _shift_path(conv, bump, e))
                shifts.append(float(np.max(np.abs(pert.u - end.u))))
            row[f"{name}_shift"] = shifts[0]
            row[f"{name}_halving_ratio"] = shifts[0] / shifts[1] if shifts[1] > 0 else float("inf")
        table.append(row)
    return {
        "endpoint_sup": float(np.max(np.abs(diff.u))),
        "endpoint_sup_hat": float(np.max(np.abs(diff.u_hat))),
        "endpoint_sobolev": float(sob),
        "steps": steps,
        "continuity": table,
    }
