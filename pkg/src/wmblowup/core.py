"""Radial grids, the discrete radial Laplacian and its modal calculus.

The radial variable is discretized on a cell-centered grid ``r_j = (j + 1/2) h``
so that no node sits at the origin. The Laplacian ``f'' + (n-1)/r f'`` is
approximated by ``Delta_h = -M^{-1} K`` where

    (K f)_j = F_{j-1/2} - F_{j+1/2},    F_{j+1/2} = r_{j+1/2}^{n-1} (f_{j+1} - f_j) / h

is the finite-volume stiffness and ``M`` is a symmetric tridiagonal mass
whose rows sum to the radial cell volumes ``V_j = (r_{j+1/2}^n - r_{j-1/2}^n)/n``.
The solid-angle factor is dropped throughout. No flux crosses the origin,
which encodes the even reflection ``f(-r) = f(r)``, and an odd ghost value
imposes a homogeneous Dirichlet condition at ``r_max``.

``Delta_h`` is self-adjoint in ``<f, g> = f^T M g``, so its eigenvectors form
an orthonormal modal basis in which resolvents, semigroups and fractional
powers are exact diagonal operations.
"""
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import linalg

from .errors import ConfigError, DomainError, ModalError, ShapeError

__all__ = [
    "RadialGrid",
    "StatePair",
    "ModalBasis",
    "SobolevOrder",
    "cell_volumes",
    "laplacian_apply",
    "mass_apply",
    "modal_decompose",
    "sobolev_norm",
    "helmholtz_solve",
    "heat_semigroup_apply",
    "corotational_lift",
    "energy",
    "inner",
]


@dataclass(frozen=True)
class RadialGrid:
    """Uniform cell-centered radial grid on ``[0, r_max]``."""

    r_max: float
    n_points: int

    def __post_init__(self):
        if not self.r_max > 0:
            raise DomainError(f"r_max must be positive, got {self.r_max}")
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise DomainError(f"n_points must be a positive integer, got {self.n_points}")

    @property
    def h(self):
        return self.r_max / self.n_points

    @cached_property
    def nodes(self):
        return (np.arange(self.n_points) + 0.5) * self.h

    @cached_property
    def faces(self):
        """Cell faces ``r_{j-1/2}`` for ``j = 0..n_points`` (first is 0)."""
        return np.arange(self.n_points + 1) * self.h

    @classmethod
    def from_spacing(cls, r_max, h):
        n_points = int(round(r_max / h))
        return cls(n_points * h, n_points)


@dataclass(frozen=True)
class StatePair:
    """Field and velocity samples ``(u, u_hat)`` on a radial grid."""

    u: np.ndarray
    u_hat: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        u_hat = np.asarray(self.u_hat, dtype=float)
        if u.shape != u_hat.shape or u.ndim != 1:
            raise ShapeError(f"state components have shapes {u.shape} and {u_hat.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(u_hat))):
            raise DomainError("state contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "u_hat", u_hat)

    @classmethod
    def zeros(cls, n_points):
        return cls(np.zeros(n_points), np.zeros(n_points))

    def __len__(self):
        return self.u.size

    def __add__(self, other):
        return StatePair(self.u + other.u, self.u_hat + other.u_hat)

    def __sub__(self, other):
        return StatePair(self.u - other.u, self.u_hat - other.u_hat)

    def __mul__(self, scalar):
        return StatePair(scalar * self.u, scalar * self.u_hat)

    __rmul__ = __mul__

    def stacked(self):
        return np.concatenate([self.u, self.u_hat])

    @classmethod
    def unstack(cls, y):
        m = y.size // 2
        return cls(y[:m], y[m:])


@dataclass(frozen=True)
class SobolevOrder:
    """Orders ``(s, k)`` of the intersection space used for norms.

    The admissible window for ambient dimension ``n`` is
    ``n/2 - 1 < s < n/2 - 1 + 1/(2n - 4)`` with integer ``k > n``.
    """

    s: float = 1.6
    k: int = 6

    def validate(self, n):
        lo = n / 2 - 1
        hi = lo + 1 / (2 * n - 4)
        if not lo < self.s < hi:
            raise ConfigError(f"s = {self.s} outside ({lo}, {hi:.6g}) for n = {n}")
        if int(self.k) != self.k or self.k <= n:
            raise ConfigError(f"k = {self.k} must be an integer > n = {n}")
        return self


def _check_dim(n):
    if n < 3:
        raise DomainError(f"dimension n must be >= 3, got {n}")


def cell_volumes(grid, n):
    """Radial cell volumes ``V_j = (r_{j+1/2}^n - r_{j-1/2}^n) / n``."""
    f = grid.faces
    return (f[1:] ** n - f[:-1] ** n) / n


@dataclass(frozen=True, eq=False)
class _Operator:
    # bands of the stiffness K (symmetric, K 1 = 0 except the outer row)
    k_diag: np.ndarray
    k_off: np.ndarray
    # bands of the consistent mass M (symmetric, M 1 = V)
    m_diag: np.ndarray
    m_off: np.ndarray
    volumes: np.ndarray

    @cached_property
    def m_banded(self):
        ab = np.zeros((3, self.m_diag.size))
        ab[0, 1:] = self.m_off
        ab[1] = self.m_diag
        ab[2, :-1] = self.m_off
        return ab


def compact_mass(flux_r4, vol, r, n):
    """Bands of a tridiagonal mass ``M`` with rows summing to ``vol``.

    The coupling between cells ``j`` and ``j+1`` is fixed row by row so that
    ``M (Delta r^4) = flux_r4`` on every row but the last, where ``flux_r4``
    is the flux-difference operator applied to ``r^4``. Paired with flux
    differences that are exact on ``r^2`` this removes the leading error of
    the lumped (diagonal) mass near the origin.
    """
    lap4 = 4.0 * (n + 2) * r**2
    m_off = np.zeros(max(r.size - 1, 0))
    prev = 0.0
    for j in range(r.size - 1):
        rhs = flux_r4[j] - vol[j] * lap4[j]
        if j > 0:
            rhs -= prev * (lap4[j - 1] - lap4[j])
        prev = rhs / (lap4[j + 1] - lap4[j])
        m_off[j] = prev
    m_diag = vol.copy()
    m_diag[:-1] -= m_off
    m_diag[1:] -= m_off
    return m_diag, m_off


def _tridiag_apply(diag, off, f):
    out = diag * f
    out[..., :-1] += off * f[..., 1:]
    out[..., 1:] += off * f[..., :-1]
    return out


@lru_cache(maxsize=32)
def _operator(grid, n):
    _check_dim(n)
    faces = grid.faces
    h = grid.h
    vol = cell_volumes(grid, n)
    c_int = faces[1:-1] ** (n - 1) / h
    # Dirichlet closure through the odd ghost value -f_{N-1} across r_max
    c_out = 2.0 * faces[-1] ** (n - 1) / h
    k_diag = np.zeros(grid.n_points)
    k_diag[:-1] += c_int
    k_diag[1:] += c_int
    k_diag[-1] += c_out
    k_off = -c_int
    m_diag, m_off = compact_mass(-_tridiag_apply(k_diag, k_off, grid.nodes**4), vol,
                                 grid.nodes, n)
    return _Operator(k_diag, k_off, m_diag, m_off, vol)


def mass_apply(f, grid, n):
    """Apply the mass matrix that defines the discrete inner product."""
    op = _operator(grid, n)
    return _tridiag_apply(op.m_diag, op.m_off, np.asarray(f, dtype=float))


def inner(f, g, grid, n):
    """Discrete inner product ``f^T M g`` approximating ``int f g r^{n-1} dr``."""
    return float(np.sum(np.asarray(f) * mass_apply(g, grid, n)))


def laplacian_apply(f, grid, n):
    """Apply the discrete radial Laplacian ``Delta_h = -M^{-1} K``.

    ``K`` is the finite-volume stiffness (face fluxes, zero flux at the
    origin, Dirichlet ghost at ``r_max``) and ``M`` a tridiagonal consistent
    mass whose rows sum to the cell volumes. Constants and ``r^2`` are
    reproduced exactly, ``r^4`` on all rows but the outer one, which leaves a
    second-order error with a small constant. Leading axes of ``f`` are
    treated as a batch.
    """
    _check_dim(n)
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.n_points:
        raise ShapeError(f"expected {grid.n_points} samples, got {f.shape[-1]}")
    op = _operator(grid, n)
    rhs = -_tridiag_apply(op.k_diag, op.k_off, f)
    flat = rhs.reshape(-1, grid.n_points).T
    out = linalg.solve_banded((1, 1), op.m_banded, flat, check_finite=False)
    return out.T.reshape(f.shape)


@dataclass(frozen=True, eq=False)
class ModalBasis:
    """Eigen-decomposition of ``-Delta_h``.

    ``eigenvectors[:, k]`` is orthonormal in the mass inner product and
    ``-Delta_h e_k = eigenvalues[k] e_k``. ``dual`` holds ``M e_k`` so that
    coefficients are plain dot products.
    """

    n: int
    grid: RadialGrid
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dual: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.eigenvalues.size

    def coefficients(self, f):
        """Modal coefficients ``<f, e_k>`` (leading axes are a batch)."""
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.grid.n_points:
            raise ShapeError(f"expected {self.grid.n_points} samples, got {f.shape[-1]}")
        return f @ self.dual

    def synthesize(self, c):
        c = np.asarray(c, dtype=float)
        return c @ self.eigenvectors[:, : c.shape[-1]].T

    def apply_multiplier(self, f, multiplier):
        """Diagonal operator ``e_k -> multiplier[k] e_k`` applied to ``f``."""
        return self.synthesize(self.coefficients(f) * multiplier)

    def checksum(self):
        import hashlib

        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.eigenvalues).tobytes())
        return digest.hexdigest()[:16]


def modal_decompose(grid, n):
    """Full eigen-decomposition of ``-Delta_h`` (generalized problem ``K v = lam M v``)."""
    _check_dim(n)
    if grid.n_points > 4096:
        raise DomainError(f"n_points = {grid.n_points} exceeds the dense budget of 4096")
    op = _operator(grid, n)
    K = np.diag(op.k_diag) + np.diag(op.k_off, 1) + np.diag(op.k_off, -1)
    M = np.diag(op.m_diag) + np.diag(op.m_off, 1) + np.diag(op.m_off, -1)
    try:
        lam, vecs = linalg.eigh(K, M, check_finite=False)
    except linalg.LinAlgError as exc:
        raise ModalError(f"generalized eigensolve failed: {exc}", np.linalg.cond(M)) from exc
    lam = np.where(lam < 0, 0.0, lam)
    # fix the sign so every mode is positive at the origin cell
    signs = np.where(vecs[0] < 0, -1.0, 1.0)
    return ModalBasis(n, grid, lam, vecs * signs, M @ (vecs * signs))


def sobolev_norm(state, order, basis, diagnostic=False, modes=None):
    """Modal surrogate of the norm on ``Hdot^{s,k} x Hdot^{s-1,k-1}``.

    Returns ``(components, total)`` where ``components`` holds the four squared
    pieces ``u_s, u_k, uhat_s, uhat_k``. Orders outside the admissible window
    raise :class:`ConfigError` unless ``diagnostic`` is set. ``modes`` keeps
    only the lowest modes; grid-scale content otherwise dominates the ``k`` part.
    """
    if not diagnostic:
        order.validate(basis.n)
    if len(state) != basis.grid.n_points:
        raise ShapeError("state and basis live on different grids")
    m = basis.size if modes is None else int(modes)
    lam = basis.eigenvalues[:m]
    a = basis.coefficients(state.u)[:m] ** 2
    b = basis.coefficients(state.u_hat)[:m] ** 2
    parts = {
        "u_s": float(np.sum(lam**order.s * a)),
        "u_k": float(np.sum(lam**order.k * a)),
        "uhat_s": float(np.sum(lam ** (order.s - 1) * b)),
        "uhat_k": float(np.sum(lam ** (order.k - 1) * b)),
    }
    return parts, float(np.sqrt(sum(parts.values())))


def helmholtz_solve(f, basis, power=1):
    """``(I - Delta_h)^{-power} f`` for ``power`` in {1, 2}."""
    if power not in (1, 2):
        raise DomainError(f"power must be 1 or 2, got {power}")
    return basis.apply_multiplier(f, (1.0 + basis.eigenvalues) ** (-power))


def heat_semigroup_apply(f, basis, t):
    """``exp(t (Delta_h - I)) f``."""
    if t < 0:
        raise DomainError(f"heat semigroup needs t >= 0, got {t}")
    return basis.apply_multiplier(f, np.exp(-t * (1.0 + basis.eigenvalues)))


def corotational_lift(u_value, X):
    """Point on the sphere ``S^d`` for polar angle ``|X| u`` in direction ``X``."""
    X = np.asarray(X, dtype=float)
    rho = np.linalg.norm(X)
    out = np.zeros(X.size + 1)
    if rho == 0.0:
        out[-1] = 1.0
        return out
    theta = rho * u_value
    out[:-1] = np.sin(theta) * X / rho
    out[-1] = np.cos(theta)
    return out


def energy(state, grid, n, geometric=False):
    """Discrete energy ``1/2 <u_hat, u_hat> + 1/2 u^T K u`` of a radial state.

    With ``geometric`` the potential of the wave-map nonlinearity,
    ``(n-3)/2 * int (r^2 u^2 - sin^2(r u)) / r^4 r^{n-1} dr``, is subtracted;
    the result is then the conserved energy of the nonlinear radial equation
    and may be negative.
    """
    op = _operator(grid, n)
    kinetic = 0.5 * inner(state.u_hat, state.u_hat, grid, n)
    potential = 0.5 * float(state.u @ _tridiag_apply(op.k_diag, op.k_off, state.u))
    total = kinetic + potential
    if geometric:
        r = grid.nodes
        # (r^2 u^2 - sin^2(r u)) / r^4 = u^2 (1 - sinc^2(r u)) / r^2
        sinc = np.sinc(r * state.u / np.pi)
        density = state.u**2 * (1.0 - sinc**2) / r**2
        total -= 0.5 * (n - 3) * np.sum(density * op.volumes)
    return float(total)
