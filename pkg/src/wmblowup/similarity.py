"""Similarity variables around a candidate blowup time.

With ``s = T - t`` the rescaled variables are

    tau = log(T / s),   xi = r / s,   U = s u,   U_hat = s^2 u_hat,

in which the self-similar solution becomes the equilibrium ``(Phi, Phi_hat)``
of ``d/dtau (U, U_hat) = L0 (U, U_hat) + (0, n(U))`` with

    L0 = [[-1 - xi d/dxi, 1], [Delta, -2 - xi d/dxi]].

The characteristic speeds are ``xi - 1`` and ``xi + 1``, both outgoing for
``xi > 1``, so the truncated interval ``[0, xi_max]`` needs no boundary
condition: the transport terms use upwind-biased differences and the outer
Laplacian flux is extrapolated from the interior. The Laplacian pairs these
flux differences with the compact mass of :mod:`core`.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, sparse
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from .core import RadialGrid, StatePair, cell_volumes, compact_mass
from .errors import DivergenceError, DomainError, FitRejected
from .physics import N_perturbation, NonlinearityContext, n0, potential_V
from .profiles import phi, phi_hat

__all__ = [
    "SimilarityFrame",
    "xi_grid",
    "tau_of_t",
    "t_of_tau",
    "to_similarity",
    "from_similarity",
    "similarity_operator",
    "apply_operator",
    "evolve_similarity",
    "stable_step",
    "fit_blowup_time",
    "estimate_T_tilde",
    "psi_discrepancy",
    "even_spline",
]


@dataclass(frozen=True)
class SimilarityFrame:
    """Candidate blowup time, similarity time and the ``xi`` grid."""

    T_tilde: float
    tau: float = 0.0
    grid: RadialGrid = None

    def __post_init__(self):
        if not self.T_tilde > 0:
            raise DomainError(f"T_tilde must be positive, got {self.T_tilde}")
        if self.grid is not None and not self.grid.r_max > 1:
            raise DomainError("xi_max must exceed 1 so that the outer boundary is outflow")

    @property
    def t(self):
        return t_of_tau(self.tau, self.T_tilde)

    @property
    def scale(self):
        """``T_tilde - t = T_tilde exp(-tau)``."""
        return self.T_tilde * np.exp(-self.tau)


def xi_grid(xi_max=2.5, h=1 / 128):
    return RadialGrid.from_spacing(xi_max, h)


def tau_of_t(t, T_tilde):
    if np.any(np.asarray(t) >= T_tilde):
        raise DomainError("t must be smaller than T_tilde")
    return -np.log1p(-np.asarray(t) / T_tilde)


def t_of_tau(tau, T_tilde):
    return -T_tilde * np.expm1(-np.asarray(tau))


def even_spline(grid, values, outer=None):
    """Cubic spline through grid samples, reflected evenly across the origin.

    ``outer`` adds a knot at ``r_max`` (e.g. 0 for Dirichlet data).
    """
    nodes = grid.nodes
    knots = np.concatenate([-nodes[::-1], nodes])
    vals = np.concatenate([values[::-1], values])
    if outer is not None:
        knots = np.append(knots, grid.r_max)
        vals = np.append(vals, outer)
    return CubicSpline(knots, vals)


def to_similarity(state, t, T_tilde, grid_xi, phys_grid):
    """Physical ``(u, u_hat)`` at time ``t`` as ``(U, U_hat)`` on ``grid_xi``."""
    s = T_tilde - t
    if not s > 0:
        raise DomainError(f"t = {t} is not before T_tilde = {T_tilde}")
    need = s * grid_xi.nodes[-1]
    if need > phys_grid.nodes[-1]:
        raise DomainError(f"physical data must cover r = {need:.6g}, grid ends at "
                          f"{phys_grid.nodes[-1]:.6g}")
    x = s * grid_xi.nodes
    u = even_spline(phys_grid, state.u)(x)
    uh = even_spline(phys_grid, state.u_hat)(x)
    return StatePair(s * u, s**2 * uh)


def from_similarity(sim_state, frame, phys_grid, fill=None):
    """Inverse of :func:`to_similarity` on the nodes of ``phys_grid``.

    Nodes beyond ``scale * xi_max`` are not covered by the similarity data;
    they raise :class:`DomainError` unless a ``fill`` value is given.
    """
    s = frame.scale
    r = phys_grid.nodes
    xi = r / s
    inside = xi <= frame.grid.nodes[-1]
    if not np.all(inside) and fill is None:
        raise DomainError(f"similarity data cover r <= {s * frame.grid.nodes[-1]:.6g} only")
    U = even_spline(frame.grid, sim_state.u)(np.where(inside, xi, 0.0))
    Uh = even_spline(frame.grid, sim_state.u_hat)(np.where(inside, xi, 0.0))
    u = np.where(inside, U / s, fill if fill is not None else 0.0)
    uh = np.where(inside, Uh / s**2, fill if fill is not None else 0.0)
    return StatePair(u, uh)


@dataclass(frozen=True, eq=False)
class _Blocks:
    XD: sparse.csr_matrix       # xi d/dxi, upwind-biased
    K: sparse.csr_matrix        # flux differences, K f ~ V_j (Delta f)_j
    m_banded: np.ndarray        # compact mass for solve_banded

    def laplacian(self, f):
        return linalg.solve_banded((1, 1), self.m_banded, self.K @ f, check_finite=False)

    def laplacian_dense(self):
        return linalg.solve_banded((1, 1), self.m_banded, self.K.toarray(), check_finite=False)


@lru_cache(maxsize=16)
def _blocks(grid, n):
    N, h = grid.n_points, grid.h
    if N < 4:
        raise DomainError("similarity grid needs at least 4 nodes")
    x = grid.nodes
    # Third-order upwind-biased derivative (2, 3, -6, 1)/6h on nodes j+1..j-2;
    # the outermost node has no downwind neighbour and uses the one-sided
    # (11, -18, 9, -2)/6h. Even reflection supplies the ghosts at the origin.
    rows, cols, vals = [], [], []
    for j in range(N):
        if j < N - 1:
            stencil = ((1, 2.0), (0, 3.0), (-1, -6.0), (-2, 1.0))
        else:
            stencil = ((0, 11.0), (-1, -18.0), (-2, 9.0), (-3, -2.0))
        for off, c in stencil:
            i = j + off
            i = i if i >= 0 else -i - 1
            rows.append(j)
            cols.append(i)
            vals.append(c / (6 * h))
    D = sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))
    # Flux differences with zero flux at the origin; the outer face gradient
    # is the one-sided extrapolation (2 f_{N-1} - 3 f_{N-2} + f_{N-3}) / h.
    faces = grid.faces
    c = faces[1:-1] ** (n - 1) / h
    main = np.zeros(N)
    main[:-1] -= c
    main[1:] -= c
    K = sparse.diags([c, main, c], [-1, 0, 1], format="lil")
    fo = faces[-1] ** (n - 1) / h
    K[N - 1, N - 1] += 2 * fo
    K[N - 1, N - 2] += -3 * fo
    K[N - 1, N - 3] += fo
    K = K.tocsr()
    m_diag, m_off = compact_mass(K @ x**4, cell_volumes(grid, n), x, n)
    ab = np.zeros((3, N))
    ab[0, 1:] = m_off
    ab[1] = m_diag
    ab[2, :-1] = m_off
    return _Blocks((sparse.diags(x) @ D).tocsr(), K, ab)


def similarity_operator(grid, n=5, potential=False):
    """Dense matrix of ``L0`` (or ``L = L0 + V`` with ``potential``) on stacked ``(U, U_hat)``."""
    blk = _blocks(grid, n)
    N = grid.n_points
    I = np.eye(N)
    XD = blk.XD.toarray()
    lower = blk.laplacian_dense()
    if potential:
        lower = lower + np.diag(potential_V(grid.nodes, n))
    return np.block([[-I - XD, I], [lower, -2 * I - XD]])


def apply_operator(y, grid, n=5, potential=False):
    """``L0 y`` (or ``L y``) without forming the dense matrix."""
    blk = _blocks(grid, n)
    N = grid.n_points
    U, Uh = y[:N], y[N:]
    top = -U - blk.XD @ U + Uh
    bottom = blk.laplacian(U) - 2 * Uh - blk.XD @ Uh
    if potential:
        bottom = bottom + potential_V(grid.nodes, n) * U
    return np.concatenate([top, bottom])


def stable_step(grid, n=5, cfl=0.4):
    """Default ``dtau``.

    The spectral radius of the discrete first-order system is close to
    ``5 / h``; RK4 is stable up to ``|z| ~ 2.8`` along the imaginary axis and
    ``2.78`` along the negative real axis.
    """
    return cfl * grid.h


def evolve_similarity(initial, tau_span, grid, n=5, mode="full", dtau=None, forcing=None,
                      stride=1):
    """Integrate the similarity-variable equation with classical RK4.

    Parameters
    ----------
    initial : StatePair
        ``(U, U_hat)`` for ``mode="full"``, the perturbation ``(Psi, Psi_hat)``
        otherwise.
    tau_span : float
    grid : RadialGrid
        The ``xi`` grid.
    mode : {"full", "linear", "forced"}
        ``full``: ``L0 U + n(U)``. ``linear``: ``L Psi`` with ``L = L0 + V``.
        ``forced``: ``L Psi + N(Psi + Z) + V Z`` where ``forcing(tau)``
        returns the field ``Z`` on the grid.
    dtau : float, optional
        Defaults to :func:`stable_step`.
    stride : int
        Keep every ``stride``-th state.

    Returns
    -------
    taus : ndarray
    states : ndarray
        Shape ``(len(taus), 2 N)`` of stacked pairs.
    """
    if mode not in ("full", "linear", "forced"):
        raise DomainError(f"unknown mode {mode!r}")
    if mode == "forced" and forcing is None:
        raise DomainError("forced mode needs a forcing callable")
    dtau = stable_step(grid, n) if dtau is None else dtau
    steps = int(np.ceil(tau_span / dtau - 1e-9))
    dtau = tau_span / steps if steps else dtau
    potential = mode != "full"
    ctx = NonlinearityContext(n)
    N = grid.n_points
    V = potential_V(grid.nodes, n)

    def rhs(tau, y):
        out = apply_operator(y, grid, n, potential)
        if mode == "full":
            out[N:] += n0(y[:N], grid, ctx)
        elif mode == "forced":
            Z = forcing(tau)
            out[N:] += N_perturbation(y[:N] + Z, grid, ctx) + V * Z
        return out

    y = initial.stacked().copy()
    taus = [0.0]
    out = [y.copy()]
    for j in range(steps):
        tau = j * dtau
        k1 = rhs(tau, y)
        k2 = rhs(tau + dtau / 2, y + dtau / 2 * k1)
        k3 = rhs(tau + dtau / 2, y + dtau / 2 * k2)
        k4 = rhs(tau + dtau, y + dtau * k3)
        y = y + dtau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise DivergenceError("similarity evolution diverged", tau + dtau)
        if (j + 1) % stride == 0 or j == steps - 1:
            taus.append((j + 1) * dtau)
            out.append(y.copy())
    return np.array(taus), np.array(out)


def _invert_central(u, r0, d):
    # u = Phi(r0 / s) / s  <=>  s = r0 / (sqrt(d-2) tan(u r0 / 2))
    return r0 / (np.sqrt(d - 2.0) * np.tan(0.5 * u * r0))


def fit_blowup_time(times, central, r0, d=3, window=50, exclude=5):
    """Least-squares blowup time from the central history.

    Each sample ``u(t_i, r0)`` is converted to ``s_i = T - t_i`` by inverting
    the self-similar central law, and ``s_i = alpha (T_hat - t_i)`` is fitted
    on the last ``window`` samples before the final ``exclude`` ones.

    Returns
    -------
    dict
        ``T_hat``, the slope ``alpha`` (1 for an exact self-similar tail),
        the rms residual and ``drift``, the change of ``T_hat`` against the
        window shifted back by half its length.

    Raises
    ------
    FitRejected
        If the window is too short, not strictly increasing, or leaves the
        range where the central law can be inverted.
    """
    times = np.asarray(times, dtype=float)
    central = np.asarray(central, dtype=float)

    def one(end):
        start = end - window
        if start < 0 or window < 3:
            raise FitRejected(f"need {window + exclude} samples, have {times.size}")
        t = times[start:end]
        u = central[start:end]
        if not np.all(np.diff(u) > 0):
            raise FitRejected("central values are not strictly increasing in the fit window")
        if np.any(u <= 0) or np.any(0.5 * u * r0 >= np.pi / 2):
            raise FitRejected("central values outside the invertible range")
        s = _invert_central(u, r0, d)
        coef, res, *_ = np.linalg.lstsq(np.vstack([np.ones_like(t), t]).T, s, rcond=None)
        alpha = -coef[1]
        if not alpha > 0:
            raise FitRejected("fitted scale does not shrink")
        rms = float(np.sqrt(res[0] / t.size)) if res.size else 0.0
        return coef[0] / alpha, alpha, rms

    end = times.size - exclude
    T_hat, alpha, rms = one(end)
    try:
        T_prev, _, _ = one(end - window // 2)
        drift = abs(T_hat - T_prev)
    except FitRejected:
        drift = float("nan")
    return {"T_hat": float(T_hat), "alpha": float(alpha), "rms": rms, "drift": float(drift)}


def estimate_T_tilde(times, central, r0, d=3, window=50, exclude=5, windows=4):
    """Blowup-time fit plus the sequence of estimates on earlier windows.

    ``history`` lists ``T_hat`` for windows ending ``k * window / 2`` samples
    earlier (``k = windows - 1, ..., 0``); a converged run shows a settling
    sequence.
    """
    best = fit_blowup_time(times, central, r0, d, window, exclude)
    history = []
    for k in range(windows - 1, -1, -1):
        cut = times.size - k * (window // 2)
        try:
            history.append(fit_blowup_time(times[:cut], central[:cut], r0, d, window,
                                           exclude)["T_hat"])
        except FitRejected:
            continue
    best["history"] = history
    return best


def psi_discrepancy(u, grid, t, T_hat, n=5, xi_max=2.5, samples=501, u_hat=None):
    """Distance of the rescaled field from the blowup profile.

    Computes ``D(xi) = (T_hat - t) u(t, (T_hat - t) xi) - Phi(xi)`` on
    ``samples`` equispaced points of ``[0, xi_max]``.

    Returns
    -------
    dict
        ``sup`` norm of ``D``; ``h1``, the ``xi^{n-1}``-weighted ``H^1`` norm
        of ``D`` by trapezoidal quadrature; ``sup_hat`` for the velocity if
        ``u_hat`` is given.
    """
    s = T_hat - t
    if not s > 0:
        raise DomainError(f"t = {t} is not before T_hat = {T_hat}")
    if s * xi_max > grid.nodes[-1]:
        raise DomainError(f"grid does not cover r = {s * xi_max:.6g}")
    xi = np.linspace(0.0, xi_max, samples)
    D = s * even_spline(grid, np.asarray(u))(s * xi) - phi(xi, n - 2)
    dD = np.gradient(D, xi)
    w = xi ** (n - 1)
    out = {
        "sup": float(np.max(np.abs(D))),
        "h1": float(np.sqrt(trapezoid((D**2 + dD**2) * w, xi))),
    }
    if u_hat is not None:
        Dh = s**2 * even_spline(grid, np.asarray(u_hat))(s * xi) - phi_hat(xi, n - 2)
        out["sup_hat"] = float(np.max(np.abs(Dh)))
    return out
