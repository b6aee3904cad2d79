"""Closed-form self-similar blowup profiles and the gauge mode.

For a target sphere of dimension ``d >= 3`` (space dimension ``n = d + 2``)
the reduced equation has the explicit blowup family

    u_T(t, r) = Phi(r / (T - t)) / (T - t),   Phi(rho) = (2/rho) arctan(rho / sqrt(d-2)).

Everything is evaluated from simplified closed forms; the tests compare them
with finite differences.
"""
from dataclasses import dataclass

import numpy as np

from .core import RadialGrid, cell_volumes, laplacian_apply
from .errors import DomainError
from .physics import NonlinearityContext, n0

__all__ = [
    "ProfileParams",
    "phi",
    "phi_hat",
    "phi_hat_prime",
    "u_T",
    "u_T_tt",
    "gauge_mode",
    "profile_residual",
    "residual_grid",
]


@dataclass(frozen=True)
class ProfileParams:
    """Target dimension ``d`` and blowup time ``T``; ``n = d + 2``."""

    d: int = 3
    T: float = 1.0

    def __post_init__(self):
        if self.d < 3:
            raise DomainError(f"d must be >= 3, got {self.d}")
        if not self.T > 0:
            raise DomainError(f"T must be positive, got {self.T}")

    @property
    def n(self):
        return self.d + 2


def _check_d(d):
    if d < 3:
        raise DomainError(f"d must be >= 3, got {d}")


def phi(rho, d=3):
    """Blowup profile ``(2/rho) arctan(rho/sqrt(d-2))`` with value ``2/sqrt(d-2)`` at 0."""
    _check_d(d)
    rho = np.asarray(rho, dtype=float)
    a = np.sqrt(d - 2.0)
    x = rho / a
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    # arctan(x)/x = 1 - x^2/3 + x^4/5 - ...
    ratio = np.where(small, 1.0 - x**2 / 3.0 + x**4 / 5.0, np.arctan(xs) / xs)
    return 2.0 / a * ratio


def phi_hat(rho, d=3):
    """``Phi + rho Phi' = 2 sqrt(d-2) / (d - 2 + rho^2)``."""
    _check_d(d)
    rho = np.asarray(rho, dtype=float)
    return 2.0 * np.sqrt(d - 2.0) / (d - 2.0 + rho**2)


def phi_hat_prime(rho, d=3):
    _check_d(d)
    rho = np.asarray(rho, dtype=float)
    return -4.0 * rho * np.sqrt(d - 2.0) / (d - 2.0 + rho**2) ** 2


def u_T(t, r, params=ProfileParams()):
    """Field and velocity of the self-similar solution at time ``t < T``."""
    s = params.T - t
    if not s > 0:
        raise DomainError(f"t = {t} is not before the blowup time {params.T}")
    rho = np.asarray(r, dtype=float) / s
    return phi(rho, params.d) / s, phi_hat(rho, params.d) / s**2


def u_T_tt(t, r, params=ProfileParams()):
    """Second time derivative ``(2 Phi_hat + rho Phi_hat') / (T - t)^3``."""
    s = params.T - t
    if not s > 0:
        raise DomainError(f"t = {t} is not before the blowup time {params.T}")
    rho = np.asarray(r, dtype=float) / s
    return (2.0 * phi_hat(rho, params.d) + rho * phi_hat_prime(rho, params.d)) / s**3


def gauge_mode(xi, n=5):
    """Growing mode ``(g, xi g' + 2 g)`` with ``g = 1/(xi^2 + n - 4)``."""
    if n < 5:
        raise DomainError(f"n must be >= 5, got {n}")
    xi = np.asarray(xi, dtype=float)
    q = xi**2 + n - 4.0
    return 1.0 / q, 2.0 * (n - 4.0) / q**2


def profile_residual(grid, basis=None, d=3, amplitude=1.0, r_eval=5.0, t=0.0, T=1.0):
    """Residual of ``amplitude * u_T`` in ``u_tt - Delta_h u - n0(u) = 0``.

    The time derivative is exact; the Laplacian is the discrete operator of
    :mod:`core`. Norms are taken over nodes with ``r <= r_eval``, which
    should stay well inside the grid so that the Dirichlet closure at
    ``r_max`` does not enter. ``basis`` is accepted for call-site symmetry
    and ignored.

    Returns
    -------
    dict
        ``max`` and ``l2`` (weighted by the cell volumes) residual norms,
        the number of nodes used and the residual samples themselves.
    """
    params = ProfileParams(d, T)
    n = params.n
    r = grid.nodes
    u, _ = u_T(t, r, params)
    u = amplitude * u
    utt = amplitude * u_T_tt(t, r, params)
    res = utt - laplacian_apply(u, grid, n) - n0(u, grid, NonlinearityContext(n))
    mask = r <= r_eval
    vol = cell_volumes(grid, n)[mask]
    return {
        "max": float(np.max(np.abs(res[mask]))),
        "l2": float(np.sqrt(np.sum(res[mask] ** 2 * vol))),
        "nodes": int(mask.sum()),
        "h": grid.h,
        "residual": res[mask],
    }


def residual_grid(h, r_eval=5.0, margin=3.0):
    """Grid with spacing ``h`` that extends ``margin`` beyond the evaluation radius."""
    return RadialGrid.from_spacing(r_eval + margin, h)
