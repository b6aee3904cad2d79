"""Time stepping of the stochastic radial equation in physical variables.

The equation ``u_tt = Delta u + n0(u) + dW/dt`` is advanced by leapfrog
(kick-drift-kick). Two forms are offered:

``direct``
    Steps ``(u, u_hat)`` and adds half of the Brownian increment
    ``sum_k sigma_k dB_k e_k`` in each kick.
``dpd``
    Splits ``u = w + z`` with ``z`` the exact modal stochastic convolution and
    steps the pathwise deterministic problem ``w_tt = Delta w + n0(w + z)``.

Blowup is declared when the central value ``u(t, r_0)`` at the first node
crosses an amplitude threshold. The blowup time is then estimated from the
central history by inverting the self-similar law (see
:func:`similarity.fit_blowup_time`).
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import SobolevOrder, StatePair, energy, laplacian_apply, sobolev_norm
from .errors import ContractionError, DivergenceError, DomainError, FitRejected
from .noise import sample_convolution, sample_path
from .physics import NonlinearityContext, n0
from .profiles import phi
from .similarity import fit_blowup_time, psi_discrepancy

__all__ = ["SolverConfig", "BlowupReport", "Trajectory", "step", "solve", "picard_mild_solve"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and detection settings for one physical solve.

    Parameters
    ----------
    grid : RadialGrid
    n : int
        Space dimension ``d + 2``.
    dt_factor : float
        ``dt = dt_factor * h``. The discrete Laplacian has
        ``lambda_max h^2 ~ 8.3``, so leapfrog is stable for ``dt_factor < 0.69``.
    mode : {"direct", "dpd"}
    amp_threshold : float, optional
        Central amplitude that declares blowup. Defaults to
        ``min(1e3 Phi(0), Phi(0) / (10 dt))``: the profile of width ``T - t``
        stops being resolved once ``T - t`` is a few grid spacings, so the
        trigger fires about ten steps before the blowup time.
    norm_threshold : float, optional
        Sobolev-norm trigger, checked at every measurement level. ``None``
        disables it; the norm is still reported at exit.
    t_final : float
    fit_window, fit_exclude : int
        Samples used by the blowup-time fit and samples dropped before the trigger.
    nonlinear : bool
        ``False`` removes ``n0`` (linear wave equation).
    """

    grid: object
    n: int = 5
    dt_factor: float = 0.5
    mode: str = "direct"
    amp_threshold: float = None
    norm_threshold: float = None
    t_final: float = 1.5
    fit_window: int = 50
    fit_exclude: int = 5
    nonlinear: bool = True
    order: SobolevOrder = SobolevOrder()

    def __post_init__(self):
        if not 0 < self.dt_factor <= 1:
            raise DomainError(f"dt_factor must lie in (0, 1], got {self.dt_factor}")
        if self.mode not in ("direct", "dpd"):
            raise DomainError(f"mode must be 'direct' or 'dpd', got {self.mode!r}")
        if self.amp_threshold is not None and not self.amp_threshold > 0:
            raise DomainError("amp_threshold must be positive")
        if self.norm_threshold is not None and not self.norm_threshold > 0:
            raise DomainError("norm_threshold must be positive")

    @property
    def dt(self):
        return self.dt_factor * self.grid.h

    @property
    def steps(self):
        return int(np.ceil(self.t_final / self.dt - 1e-9))

    @property
    def threshold(self):
        if self.amp_threshold is not None:
            return self.amp_threshold
        c = float(phi(0.0, self.n - 2))
        return min(1e3 * c, c / (10.0 * self.dt))


@dataclass
class BlowupReport:
    """Outcome of one solve."""

    blew_up: bool
    t_exit: float
    T_hat: float = float("nan")
    central_history: np.ndarray = field(default=None, repr=False)
    exit_norms: dict = field(default_factory=dict)
    profile_err_final: float = float("nan")
    profile_err_history: list = field(default_factory=list)
    trigger: str = ""
    sup_amp: float = float("nan")
    fit: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "blew_up": bool(self.blew_up),
            "t_exit": float(self.t_exit),
            "T_hat": float(self.T_hat),
            "trigger": self.trigger,
            "sup_amp": float(self.sup_amp),
            "profile_err_final": float(self.profile_err_final),
            "profile_err_history": [[float(t), float(e)] for t, e in self.profile_err_history],
            "exit_norms": {k: float(v) for k, v in self.exit_norms.items()},
            "fit": {k: float(v) for k, v in self.fit.items()},
        }


@dataclass
class Trajectory:
    """Time series kept by :func:`solve`.

    ``snapshots`` holds ``(t, u, u_hat)`` whenever the central value first
    crosses ``2^m Phi(0)``, plus every ``snapshot_stride``-th step if requested.
    """

    times: np.ndarray
    central: np.ndarray
    snapshots: list
    final: StatePair
    energy: np.ndarray = None


def _acceleration(u, grid, n, ctx, nonlinear, z=None):
    a = laplacian_apply(u, grid, n)
    if nonlinear:
        a = a + n0(u if z is None else u + z, grid, ctx)
    return a


def step(state, t, dt, config, noise_kick=None, z_pair=None):
    """One kick-drift-kick step.

    Parameters
    ----------
    state : StatePair
        ``(u, u_hat)`` in direct mode, ``(w, w_hat)`` in dpd mode.
    noise_kick : ndarray, optional
        Direct mode: the physical Brownian increment over the step.
    z_pair : tuple of ndarray, optional
        Dpd mode: the field ``z`` at ``t`` and ``t + dt``.
    """
    grid, n = config.grid, config.n
    ctx = NonlinearityContext(n)
    z0, z1 = (None, None) if z_pair is None else z_pair
    u, uh = state.u, state.u_hat
    # overflow is reported below as a divergence
    with np.errstate(over="ignore", invalid="ignore"):
        uh = uh + 0.5 * dt * _acceleration(u, grid, n, ctx, config.nonlinear, z0)
        if noise_kick is not None:
            uh = uh + 0.5 * noise_kick
        u = u + dt * uh
        uh = uh + 0.5 * dt * _acceleration(u, grid, n, ctx, config.nonlinear, z1)
        if noise_kick is not None:
            uh = uh + 0.5 * noise_kick
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(uh))):
        raise DivergenceError("non-finite state", t + dt)
    return StatePair(u, uh)


def _central_levels(n, threshold):
    c = float(phi(0.0, n - 2))
    levels = []
    m = 1
    while c * 2.0**m < threshold:
        levels.append(c * 2.0**m)
        m += 1
    return levels


def solve(config, initial, seed=None, model=None, basis=None, conv=None,
          snapshot_stride=None, track_energy=False):
    """Integrate from ``initial`` until blowup is detected or ``t_final``.

    Parameters
    ----------
    config : SolverConfig
    initial : StatePair
    seed : int, optional
        Seed of the noise path; ignored without a noise model.
    model : NoiseModel, optional
        ``None`` or zero amplitude means no noise.
    basis : ModalBasis, optional
        Used for the exit Sobolev norms; taken from ``model`` if absent and
        computed on demand otherwise.
    conv : ConvolutionPath, optional
        Precomputed stochastic convolution (dpd mode) or its noise path
        (direct mode). Overrides ``seed`` and is used even without ``model``,
        e.g. for the synthesized paths of :mod:`control`.

    Returns
    -------
    (Trajectory, BlowupReport)
    """
    grid, n, dt = config.grid, config.n, config.dt
    if len(initial) != grid.n_points:
        raise DomainError("initial data do not match the grid")
    steps = config.steps
    noisy = (model is not None and model.amplitude > 0) or conv is not None
    if basis is None and model is not None:
        basis = model.basis
    if basis is None and conv is not None:
        basis = conv.basis
    kicks = zs = None
    if noisy:
        if conv is not None and conv.noise.modes == 0 and config.mode != "dpd":
            raise DomainError("a deterministic forcing path needs dpd mode")
        if config.mode == "dpd":
            if conv is None:
                conv = sample_convolution(model, dt, steps * dt, seed)
            zs = conv
        else:
            path = conv.noise if conv is not None else sample_path(model, dt, steps * dt, seed)
            kicks = path.increments[:, 0, :]
            modes_e = model.basis.eigenvectors[:, : model.modes]
    threshold = config.threshold
    levels = _central_levels(n, threshold)
    state = initial
    times = np.empty(steps + 1)
    central = np.empty(steps + 1)
    energies = np.empty(steps + 1) if track_energy else None
    times[0], central[0] = 0.0, initial.u[0]
    if track_energy:
        energies[0] = energy(initial, grid, n)
    snapshots = []
    z_prev = None
    blew_up, trigger, t = False, "", 0.0
    last = 0
    report_state = initial
    try:
        for j in range(steps):
            t = j * dt
            if zs is not None:
                if z_prev is None:
                    z_prev = zs.physical_step(j)[0]
                z_next = zs.physical_step(j + 1)[0]
                state = step(state, t, dt, config, z_pair=(z_prev, z_next))
                z_prev = z_next
            elif kicks is not None:
                state = step(state, t, dt, config, noise_kick=modes_e @ kicks[:, j])
            else:
                state = step(state, t, dt, config)
            t = (j + 1) * dt
            u_full = state.u if zs is None else state.u + z_prev
            times[j + 1], central[j + 1] = t, u_full[0]
            last = j + 1
            if track_energy:
                energies[j + 1] = energy(state, grid, n)
            if snapshot_stride and (j + 1) % snapshot_stride == 0:
                snapshots.append((t, u_full.copy(), _full_velocity(state, zs, j + 1)))
            amp = abs(u_full[0])
            while levels and amp >= levels[0]:
                levels.pop(0)
                snapshots.append((t, u_full.copy(), _full_velocity(state, zs, j + 1)))
                if config.norm_threshold is not None and basis is not None:
                    _, nrm = sobolev_norm(StatePair(u_full, _full_velocity(state, zs, j + 1)),
                                          config.order, basis, diagnostic=True)
                    if nrm >= config.norm_threshold:
                        blew_up, trigger = True, "norm"
            if amp >= threshold or np.max(np.abs(u_full)) >= threshold:
                blew_up, trigger = True, trigger or "amplitude"
            if blew_up:
                break
    except DivergenceError as exc:
        blew_up, trigger, t = True, "divergence", exc.time
        log.warning("divergence at t = %.6g", exc.time)
    if last > 0 and trigger != "divergence":
        report_state = StatePair(state.u if zs is None else state.u + z_prev,
                                 _full_velocity(state, zs, last))
    times, central = times[: last + 1], central[: last + 1]
    if track_energy:
        energies = energies[: last + 1]
    snaps = [s for s in snapshots if s[0] <= t + 1e-12]
    traj = Trajectory(times, central, snaps, report_state, energies)
    report = BlowupReport(blew_up, float(t if blew_up else steps * dt), central_history=central,
                          trigger=trigger, sup_amp=float(np.max(np.abs(report_state.u))))
    if basis is not None:
        parts, total = sobolev_norm(report_state, config.order, basis, diagnostic=True)
        report.exit_norms = {"s": np.sqrt(parts["u_s"] + parts["uhat_s"]),
                             "k": np.sqrt(parts["u_k"] + parts["uhat_k"]), "total": total}
    report.exit_norms["energy"] = energy(report_state, grid, n)
    if blew_up:
        try:
            fit = fit_blowup_time(times, central, grid.nodes[0], n - 2,
                                  config.fit_window, config.fit_exclude)
            report.T_hat = fit["T_hat"]
            report.fit = fit
            hist = []
            for ts, us, _ in snaps:
                if ts < report.T_hat:
                    hist.append((ts, psi_discrepancy(us, grid, ts, report.T_hat, n)["sup"]))
            report.profile_err_history = hist
            if report.T_hat > t:
                report.profile_err_final = psi_discrepancy(
                    report_state.u, grid, t, report.T_hat, n)["sup"]
        except FitRejected as exc:
            log.info("blowup-time fit rejected: %s", exc)
            report.fit = {"rejected": 1.0}
    return traj, report


def _full_velocity(state, zs, j):
    if zs is None:
        return state.u_hat.copy()
    return state.u_hat + zs.physical_step(j)[1]


def _mode_kernels(omega, times):
    # cos and sin(omega t)/omega on a time lattice, shape (steps + 1, modes)
    x = np.outer(times, omega)
    return np.cos(x), np.sin(x), np.sinc(x / np.pi) * times[:, None]


def picard_mild_solve(initial, zs, t_span, iterations, basis, dt, n=5, tol=1e-13,
                      max_factor=1.0):
    """Fixed point of the mild formulation on ``[0, t_span]``.

    Iterates ``w -> T(t) w_0 + int_0^t T(t - s) (0, n0(w + z)(s)) ds`` on the
    uniform lattice ``s_i = i dt`` with the exact modal wave propagator and
    trapezoidal quadrature. ``zs`` supplies ``z`` at the lattice times (a
    :class:`ConvolutionPath` with the same ``dt``) or is ``None``.

    Returns
    -------
    state : StatePair
        ``(w, w_hat)`` at ``t_span``.
    info : dict
        ``factors`` (ratios of successive sup-differences), ``iterations``
        and the full ``w`` history.

    Raises
    ------
    ContractionError
        When three consecutive ratios reach ``max_factor``.
    """
    grid = basis.grid
    steps = int(round(t_span / dt))
    if steps < 1 or abs(steps * dt - t_span) > 1e-9:
        raise DomainError("t_span must be a positive multiple of dt")
    times = np.arange(steps + 1) * dt
    omega = np.sqrt(basis.eigenvalues)
    cos_t, sin_t, sinc_t = _mode_kernels(omega, times)
    a0 = basis.coefficients(initial.u)
    b0 = basis.coefficients(initial.u_hat)
    free = cos_t * a0 + sinc_t * b0
    free_hat = -omega * sin_t * a0 + cos_t * b0
    if zs is not None:
        z = np.array([zs.physical_step(i)[0] for i in range(steps + 1)])
    else:
        z = np.zeros((steps + 1, grid.n_points))
    ctx = NonlinearityContext(n)
    w = basis.synthesize(free)
    factors = []
    prev_diff = None
    it = 0
    for it in range(1, iterations + 1):
        F = basis.coefficients(n0(w + z, grid, ctx))
        # Duhamel with sin(w(t - s)) = sin(wt) cos(ws) - cos(wt) sin(ws), trapezoid in s
        cF, sF = cos_t * F, sin_t * F
        cum_c = _cumtrapz(cF, dt)
        cum_s = _cumtrapz(sF, dt)
        safe = np.where(omega > 0, omega, 1.0)
        duhamel = (sin_t * cum_c - cos_t * cum_s) / safe
        duhamel_hat = cos_t * cum_c + sin_t * cum_s
        w_new = basis.synthesize(free + duhamel)
        diff = float(np.max(np.abs(w_new - w)))
        w = w_new
        what_coeffs = free_hat + duhamel_hat
        if prev_diff is not None and prev_diff > 0:
            factors.append(diff / prev_diff)
            if len(factors) >= 3 and all(f >= max_factor for f in factors[-3:]):
                raise ContractionError("Picard iteration does not contract", factors)
        prev_diff = diff
        if diff <= tol:
            break
    state = StatePair(w[-1], basis.synthesize(what_coeffs[-1]))
    return state, {"factors": factors, "iterations": it, "history": w, "times": times}


def _cumtrapz(f, dt):
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * dt * (f[1:] + f[:-1]), axis=0)
    return out
