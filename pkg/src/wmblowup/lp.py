"""Selection of the blowup time by a stabilized fixed-point problem.

Around the profile the perturbation ``Psi`` of ``(Phi, Phi_hat)`` obeys

    d/dtau Psi = L Psi + N(Psi + Z) + V Z,    L = L0 + V,

where ``Z`` is the noise in similarity variables. ``L`` has the unstable
gauge eigenvalue 1; everything else decays. The unstable direction is
removed with the rank-one projection ``P`` onto the gauge mode, whose
coefficient is integrated backwards from ``tau = infinity``::

    Psi(tau) = S(tau)(I - P) v + int_0^tau S(tau - s)(I - P) F(s) ds
               - int_tau^inf e^(tau - s) P F(s) ds,          F = N(Psi + Z) + V Z.

This equals ``S(tau)(v - C) + int_0^tau S(tau - s) F ds`` with the corrector
``C = P(v + int_0^inf e^-s F ds)``. The candidate blowup time ``T_tilde``
enters through the initial perturbation ``v`` and the rescaled noise;
the true blowup time is the root of the gauge coefficient of ``C``.

Time is discretized on a uniform lattice ``tau_i = i dtau``. The propagator
``S(dtau)`` is the RK4 step of :mod:`similarity` raised to the number of
substeps, assembled once as a dense matrix; all integrals use the trapezoidal
rule.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import CubicSpline

from .core import SobolevOrder, StatePair, cell_volumes
from .errors import BracketError, ConfigError, ContractionError, DomainError, SmallnessError
from .noise import evaluate_z
from .physics import N_perturbation, NonlinearityContext, potential_V
from .profiles import gauge_mode, phi, phi_hat
from .similarity import even_spline, similarity_operator, stable_step, xi_grid

__all__ = [
    "LPConfig",
    "LinearizedOperator",
    "linearized_operator",
    "initial_perturbation",
    "similarity_noise",
    "corrector",
    "Corrector",
    "lp_fixed_point",
    "FixedPoint",
    "find_T_tilde",
    "TTildeResult",
    "reconstruct",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LPConfig:
    """Parameters of the fixed-point problem and its discretization.

    Parameters
    ----------
    delta : float
        Radius of the ball in the weighted space.
    big_C : float
        Data smallness divisor: ``|v|`` and ``sup |Z|`` must not exceed ``delta / big_C``.
    N : float
        Bracket divisor; ``T_tilde`` is searched in ``[T - delta/N, T + delta/N]``.
    omega_bar : float
        Decay rate of the weighted norm ``sup_tau e^(omega_bar tau) |Psi(tau)|``.
    tau_max : float
        Truncation of the integrals over ``[0, inf)``.
    picard_tol, picard_max_iter
        Stopping rule for the Picard iteration (weighted sup of successive differences).
    dtau : float
        Lattice spacing in ``tau``.
    xi_max, xi_h : float
        Similarity grid.
    root_tol : float
        Required ``|gauge coefficient|`` at the returned ``T_tilde``.
    workers : int
        Processes for the bracket scan.
    """

    delta: float = 0.1
    big_C: float = 1.0
    N: float = 10.0
    omega_bar: float = 0.05
    tau_max: float = 200.0
    picard_tol: float = 1e-10
    picard_max_iter: int = 40
    dtau: float = 0.05
    xi_max: float = 2.5
    xi_h: float = 1 / 128
    root_tol: float = 1e-8
    workers: int = 1

    def validate(self, T=1.0, n=5, order=SobolevOrder()):
        if not (self.delta > 0 and self.big_C > 0 and self.N > 0):
            raise ConfigError("delta, big_C and N must be positive")
        if self.delta / self.N > T / 2:
            raise ConfigError(f"delta/N = {self.delta / self.N} exceeds T/2 = {T / 2}")
        upper = order.s + 1 - n / 2
        if not 0 < self.omega_bar < upper:
            raise ConfigError(f"omega_bar = {self.omega_bar} outside (0, {upper:.6g})")
        if self.tau_max < 10 / self.omega_bar:
            raise ConfigError(f"tau_max = {self.tau_max} is below 10/omega_bar")
        if self.picard_tol <= 0 or self.picard_max_iter < 1:
            raise ConfigError("picard_tol and picard_max_iter must be positive")
        steps = self.tau_max / self.dtau
        if self.dtau <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ConfigError("tau_max must be a multiple of dtau")
        if self.xi_max <= 1:
            raise ConfigError("xi_max must exceed 1")
        return self

    @property
    def bracket_halfwidth(self):
        return self.delta / self.N

    @property
    def taus(self):
        return np.arange(int(round(self.tau_max / self.dtau)) + 1) * self.dtau


@dataclass(frozen=True, eq=False)
class LinearizedOperator:
    """Discrete ``L = L0 + V`` with its gauge eigenpair and projection.

    Attributes
    ----------
    matrix : ndarray
        Dense ``2N x 2N`` matrix acting on stacked ``(Psi, Psi_hat)``.
    gauge : ndarray
        Right eigenvector near 1, scaled to the analytic gauge mode at the first node.
    cogauge : ndarray
        Representer of the projection in the weighted pairing: ``<gauge, cogauge>_w = 1``.
    weight : ndarray
        Diagonal weight (cell volumes, repeated for both components).
    eigenvalue : float
    propagator : ndarray or None
        ``S(dtau)`` as a dense matrix (``None`` when built without ``dtau``).
    """

    grid: object
    n: int
    matrix: np.ndarray = field(repr=False)
    gauge: np.ndarray = field(repr=False)
    cogauge: np.ndarray = field(repr=False)
    weight: np.ndarray = field(repr=False)
    eigenvalue: float
    dtau: float
    propagator: np.ndarray = field(repr=False)

    @property
    def left(self):
        """Left eigenvector in the Euclidean pairing, ``left @ gauge = 1``."""
        return self.weight * self.cogauge

    def pair(self, f, g):
        return float(np.sum(self.weight * f * g))

    def norm(self, f):
        """Weighted ``L2`` norm over the last axis."""
        return np.sqrt(np.sum(self.weight * f * f, axis=-1))

    def coefficient(self, f):
        """Gauge coefficient ``c`` with ``P f = c * gauge`` (batched)."""
        return f @ self.left

    def project(self, f):
        c = self.coefficient(f)
        return np.multiply.outer(c, self.gauge)

    def complement(self, f):
        return f - self.project(f)

    def gauge_residual(self, margin=5):
        """``|L g - g| / |g|`` over nodes with ``xi <= xi_max - margin h``, using the analytic ``g``."""
        x = self.grid.nodes
        g, gh = gauge_mode(x, self.n)
        G = np.concatenate([g, gh])
        mask = np.tile(x <= self.grid.r_max - margin * self.grid.h, 2)
        r = self.matrix @ G - G
        return float(np.linalg.norm(r[mask]) / np.linalg.norm(G[mask]))


def _inverse_iteration(A, start, shift, iters=6):
    lu = linalg.lu_factor(A - shift * np.eye(A.shape[0]))
    v = start / np.linalg.norm(start)
    for _ in range(iters):
        v = linalg.lu_solve(lu, v)
        v /= np.linalg.norm(v)
    return v


@lru_cache(maxsize=8)
def linearized_operator(grid, n=5, dtau=0.05, shift=1.0):
    """Assemble ``L``, its gauge eigenpair and the propagator ``S(dtau)``.

    The eigenvectors come from inverse iteration at ``shift``, started from the
    analytic gauge mode (right) and its weighted dual (left). ``dtau=None``
    skips the propagator, which dominates the cost on fine grids.
    """
    A = similarity_operator(grid, n, potential=True)
    x = grid.nodes
    g, gh = gauge_mode(x, n)
    G0 = np.concatenate([g, gh])
    w = np.tile(cell_volumes(grid, n), 2)
    right = _inverse_iteration(A, G0, shift)
    right *= G0[0] / right[0]
    left = _inverse_iteration(A.T, w * G0, shift)
    left /= left @ right
    lam = float(left @ A @ right)
    if dtau is None:
        return LinearizedOperator(grid, n, A, right, left / w, w, lam, None, None)
    # RK4 step matrix, raised to the substeps of one lattice step
    sub = int(np.ceil(dtau / stable_step(grid, n) - 1e-9))
    hA = (dtau / sub) * A
    I = np.eye(A.shape[0])
    R = I + hA @ (I + hA @ (I / 2 + hA @ (I / 6 + hA / 24)))
    S = np.linalg.matrix_power(R, sub)
    return LinearizedOperator(grid, n, A, right, left / w, w, lam, dtau, S)


def _sample(data, r, phys_grid):
    if callable(data):
        return np.asarray(data(r), dtype=float)
    return even_spline(phys_grid, np.asarray(data, dtype=float))(r)


def initial_perturbation(u0, T_tilde, T, grid, phys_grid=None, n=5):
    """``Psi_0 = (T_tilde u0(T_tilde xi) - Phi, T_tilde^2 u0_hat(T_tilde xi) - Phi_hat)``.

    ``u0`` is a pair of callables of ``r`` or a :class:`StatePair` sampled on
    ``phys_grid`` (interpolated by even cubic splines).
    """
    if not 0 < T_tilde <= 2 * T:
        raise DomainError(f"T_tilde = {T_tilde} outside (0, {2 * T}]")
    x = grid.nodes
    r = T_tilde * x
    if isinstance(u0, StatePair):
        if phys_grid is None:
            raise DomainError("sampled data need their physical grid")
        if r[-1] > phys_grid.nodes[-1]:
            raise DomainError(f"data must cover r = {r[-1]:.6g}")
        f, fh = u0.u, u0.u_hat
    else:
        f, fh = u0
    d = n - 2
    U = T_tilde * _sample(f, r, phys_grid) - phi(x, d)
    Uh = T_tilde**2 * _sample(fh, r, phys_grid) - phi_hat(x, d)
    return StatePair(U, Uh)


def similarity_noise(conv, T_tilde, taus, grid):
    """Stacked ``(Z, Z_hat)(tau_i)`` of a physical convolution path, shape ``(len(taus), 2N)``.

    ``Z = s z(T_tilde - s, s xi)`` and ``Z_hat = s^2 z_hat(...)`` with ``s = T_tilde e^-tau``.
    ``conv=None`` gives zeros.
    """
    N = grid.n_points
    out = np.zeros((len(taus), 2 * N))
    if conv is None:
        return out
    if conv.t_final < T_tilde - 1e-12:
        raise DomainError(f"noise path ends at {conv.t_final}, before T_tilde = {T_tilde}")
    x = grid.nodes
    nodes = conv.basis.grid.nodes
    E = conv.basis.eigenvectors
    for i, tau in enumerate(taus):
        s = T_tilde * np.exp(-tau)
        t = min(T_tilde - s, conv.t_final)
        # a local spline over the nodes that matter keeps late times cheap
        k = int(np.searchsorted(nodes, s * x[-1])) + 4
        if k >= nodes.size:
            z, zh = evaluate_z(conv, t, s * x)
        else:
            a, b = conv.modal_at(t)
            knots = np.concatenate([-nodes[k - 1::-1], nodes[:k]])
            vals = E[:k, : a.size] @ np.stack([a, b], axis=1)
            vals = np.concatenate([vals[::-1], vals])
            z, zh = CubicSpline(knots, vals)(s * x).T
        out[i, :N] = s * z
        out[i, N:] = s * s * zh
    return out


def _forcing(psi, Z, op, V, ctx):
    # N(Psi + Z) + V Z as stacked rows; only the velocity component is nonzero
    N = op.grid.n_points
    F = np.zeros_like(psi)
    K = psi[:, :N] + Z[:, :N]
    F[:, N:] = N_perturbation(K, op.grid, ctx) + V * Z[:, :N]
    return F


class Corrector(NamedTuple):
    """Gauge coefficient ``coef`` of the corrector, the vector ``coef * gauge`` and its error bar.

    ``tail`` bounds the integral beyond ``tau_max``; ``error_bar`` adds the
    rounding bound of the quadrature sum.
    """

    coef: float
    vector: np.ndarray
    tail: float
    error_bar: float


def corrector(v, F, op, dtau):
    """Corrector ``C = P(v + int_0^inf e^-s F(s) ds)`` from forcing samples ``F`` on the lattice."""
    v = v.stacked() if isinstance(v, StatePair) else np.asarray(v, dtype=float)
    a = op.coefficient(F)
    if len(a) < 2:
        raise DomainError("the forcing must cover at least two lattice times")
    tau_max = (len(a) - 1) * dtau
    decay = np.exp(-np.arange(len(a)) * dtau)
    terms = 0.5 * dtau * (decay[1:] * a[1:] + decay[:-1] * a[:-1])
    cv = float(op.coefficient(v))
    coef = cv + float(np.sum(terms))
    tail = float(np.exp(-tau_max) * np.max(np.abs(a)))
    eps = np.finfo(float).eps
    rounding = eps * (len(terms) * float(np.sum(np.abs(terms))) + abs(cv) + abs(coef))
    return Corrector(coef, coef * op.gauge, tail, tail + rounding)


def _apply_map(v, F, op, dtau):
    """One application of the stabilized Duhamel map; returns ``(Psi, coef)``."""
    M = F.shape[0]
    a = op.coefficient(F)
    e = np.exp(-dtau)
    # backward: B_i = int_{tau_i}^{tau_max} e^(tau_i - s) a(s) ds
    B = np.zeros(M)
    for i in range(M - 2, -1, -1):
        B[i] = e * B[i + 1] + 0.5 * dtau * (a[i] + e * a[i + 1])
    QF = F - np.outer(a, op.gauge)
    S, left, gauge = op.propagator, op.left, op.gauge
    Q = np.empty_like(F)
    Q[0] = v - (left @ v) * gauge
    for i in range(M - 1):
        q = S @ (Q[i] + 0.5 * dtau * QF[i]) + 0.5 * dtau * QF[i + 1]
        # the gauge mode grows like e^tau; rounding must not seed it
        Q[i + 1] = q - (left @ q) * gauge
    psi = Q - np.outer(B, gauge)
    return psi, float(left @ v + B[0])


@dataclass
class FixedPoint:
    """Solution of the stabilized problem on the ``tau`` lattice."""

    taus: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    coef: float
    tail: float
    error_bar: float
    factors: list
    iterations: int
    residual: float
    weighted_norm: float
    within_ball: bool


def _weighted(diff, op, taus, omega_bar):
    return float(np.max(np.exp(omega_bar * taus) * op.norm(diff)))


def lp_fixed_point(v, Z, op, cfg, check_smallness=True):
    """Picard iteration for ``Psi = K_{v,Z}(Psi)`` on the lattice of ``cfg``.

    Parameters
    ----------
    v : StatePair or ndarray
        Initial perturbation.
    Z : ndarray or None
        Noise samples from :func:`similarity_noise`.
    op : LinearizedOperator
        Must have been built with ``dtau = cfg.dtau``.

    Raises
    ------
    SmallnessError
        When ``v`` or ``Z`` leaves the ball of radius ``delta / big_C``.
    ContractionError
        When three consecutive contraction factors reach 1.
    """
    if op.dtau is None or abs(op.dtau - cfg.dtau) > 1e-15:
        raise DomainError("operator and configuration use different dtau")
    taus = cfg.taus
    v = v.stacked() if isinstance(v, StatePair) else np.asarray(v, dtype=float)
    if Z is None:
        Z = np.zeros((len(taus), v.size))
    if Z.shape != (len(taus), v.size):
        raise DomainError(f"noise samples have shape {Z.shape}, expected {(len(taus), v.size)}")
    radius = cfg.delta / cfg.big_C
    if check_smallness:
        nv, nz = float(op.norm(v)), float(np.max(op.norm(Z)))
        if nv > radius or nz > radius:
            raise SmallnessError(f"|v| = {nv:.3g}, sup|Z| = {nz:.3g} exceed {radius:.3g}")
    ctx = NonlinearityContext(op.n)
    V = potential_V(op.grid.nodes, op.n)
    psi = np.zeros_like(Z)
    factors, prev = [], None
    coef, diff, it = 0.0, np.inf, 0
    for it in range(1, cfg.picard_max_iter + 1):
        new, coef = _apply_map(v, _forcing(psi, Z, op, V, ctx), op, cfg.dtau)
        diff = _weighted(new - psi, op, taus, cfg.omega_bar)
        psi = new
        if prev is not None and prev > 0:
            factors.append(diff / prev)
            if len(factors) >= 3 and all(f >= 1 for f in factors[-3:]):
                raise ContractionError("fixed-point map does not contract", factors)
        prev = diff
        if diff < cfg.picard_tol:
            break
    F = _forcing(psi, Z, op, V, ctx)
    corr = corrector(v, F, op, cfg.dtau)
    check, _ = _apply_map(v, F, op, cfg.dtau)
    residual = _weighted(check - psi, op, taus, cfg.omega_bar)
    norm = _weighted(psi, op, taus, cfg.omega_bar)
    return FixedPoint(taus, psi, corr.coef, corr.tail, corr.error_bar, factors, it, residual,
                      norm, norm <= cfg.delta)


def _objective(args):
    u0, conv, T_tilde, T, cfg, phys_grid, n = args
    grid = xi_grid(cfg.xi_max, cfg.xi_h)
    op = linearized_operator(grid, n, cfg.dtau)
    v = initial_perturbation(u0, T_tilde, T, grid, phys_grid, n)
    Z = similarity_noise(conv, T_tilde, cfg.taus, grid)
    return lp_fixed_point(v, Z, op, cfg)


@dataclass
class TTildeResult:
    """Outcome of :func:`find_T_tilde`."""

    T_tilde: float
    coef: float
    fixed_point: FixedPoint = field(repr=False)
    scan: list = field(default_factory=list)
    evaluations: int = 0
    T: float = 1.0
    bracket: tuple = ()

    def to_dict(self):
        fp = self.fixed_point
        return {
            "T": self.T,
            "T_tilde": self.T_tilde,
            "coefficient": self.coef,
            "bracket": list(self.bracket),
            "scan": [[float(t), float(c)] for t, c in self.scan],
            "evaluations": self.evaluations,
            "contraction_factors": [float(f) for f in fp.factors],
            "picard_iterations": fp.iterations,
            "fixed_point_residual": fp.residual,
            "tail_bound": fp.tail,
            "corrector_error_bar": fp.error_bar,
            "weighted_norm": fp.weighted_norm,
            "within_ball": bool(fp.within_ball),
        }

    def dump(self, fh):
        json.dump(self.to_dict(), fh, indent=2)


def find_T_tilde(u0, conv, T=1.0, cfg=LPConfig(), phys_grid=None, n=5):
    """Blowup time as the root of the corrector's gauge coefficient.

    Nine equally spaced candidates in ``[T - delta/N, T + delta/N]`` locate a
    sign change, which Brent's method then refines. Candidate evaluations of
    the scan run in ``cfg.workers`` processes.

    Raises
    ------
    BracketError
        No sign change in the bracket: the realization is outside the stable set.
    """
    cfg.validate(T, n)
    half = cfg.bracket_halfwidth
    cands = np.linspace(T - half, T + half, 9)
    jobs = [(u0, conv, float(t), T, cfg, phys_grid, n) for t in cands]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_objective, jobs))
    else:
        results = [_objective(j) for j in jobs]
    scan = [(float(t), r.coef) for t, r in zip(cands, results)]
    log.info("bracket scan: %s", scan)
    evals = len(results)
    for t, r in zip(cands, results):
        if abs(r.coef) <= cfg.root_tol:
            return TTildeResult(float(t), r.coef, r, scan, evals, T, (float(t), float(t)))
    cache = {}
    for i in range(len(cands) - 1):
        c0, c1 = results[i].coef, results[i + 1].coef
        if np.sign(c0) != np.sign(c1):
            lo, hi = float(cands[i]), float(cands[i + 1])
            break
    else:
        raise BracketError("gauge coefficient has no sign change in the bracket", scan)

    def g(t):
        r = _objective((u0, conv, t, T, cfg, phys_grid, n))
        cache[t] = r
        return r.coef

    root = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=100)
    best = cache.get(root) or _objective((u0, conv, root, T, cfg, phys_grid, n))
    evals += len(cache)
    return TTildeResult(float(root), best.coef, best, scan, evals, T, (lo, hi))


def reconstruct(result, t, r, conv=None, cfg=LPConfig(), n=5):
    """Physical field ``u = phi_T_tilde + z + psi`` at time ``t`` and radii ``r``.

    Only radii with ``r / (T_tilde - t) <= xi_max`` are covered.
    """
    T_tilde = result.T_tilde
    s = T_tilde - t
    if not s > 0:
        raise DomainError(f"t = {t} is not before T_tilde = {T_tilde}")
    r = np.asarray(r, dtype=float)
    xi = r / s
    if np.any(xi > cfg.xi_max):
        raise DomainError(f"radii beyond {cfg.xi_max * s:.6g} are not covered")
    grid = xi_grid(cfg.xi_max, cfg.xi_h)
    tau = np.log(T_tilde / s)
    fp = result.fixed_point
    j = min(int(tau / cfg.dtau), len(fp.taus) - 2)
    w = tau / cfg.dtau - j
    psi = (1 - w) * fp.psi[j] + w * fp.psi[j + 1]
    N = grid.n_points
    Psi = even_spline(grid, psi[:N])(xi)
    u = (phi(xi, n - 2) + Psi) / s
    if conv is not None:
        u = u + evaluate_z(conv, t, r)[0]
    return u
