"""The wave-map nonlinearity of the reduced radial equation.

In ``n`` space dimensions the corotational reduction produces

    n0(u) = (n - 3) / (2 r^3) * gamma(r u),    gamma(y) = 2y - sin(2y).

Since ``gamma(y) = 4y^3/3 + O(y^5)`` the quotient ``gamma(y)/y^3`` is smooth
and every formula here is written in terms of it (and of ``sin(y)/y``) so
that nothing is divided by a small radius. The same expressions serve the
similarity frame, where ``r`` becomes ``xi`` and ``u`` becomes ``U``.
"""
from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import DomainError

__all__ = [
    "NonlinearityContext",
    "gamma",
    "gamma_prime",
    "gamma_ppp",
    "gamma_over_cube",
    "sin_over",
    "n0",
    "n0_derivative",
    "potential_V",
    "N_perturbation",
]

# gamma(y)/y^3 = sum_k (-1)^(k+1) 2^(2k+1) y^(2k-2) / (2k+1)!, k >= 1.
# Nine terms leave a remainder below 1e-20 (relative) for |y| <= 0.5.
_SERIES = np.array([(-1) ** (k + 1) * 2.0 ** (2 * k + 1) / factorial(2 * k + 1)
                    for k in range(1, 10)])


@dataclass(frozen=True)
class NonlinearityContext:
    """Dimension and the switch point between series and closed forms."""

    n: int = 5
    taylor_threshold: float = 0.25

    def __post_init__(self):
        if self.n < 4:
            raise DomainError(f"n must be >= 4, got {self.n}")
        if not 0 < self.taylor_threshold <= 0.5:
            raise DomainError("taylor_threshold must lie in (0, 0.5]")


def gamma(y):
    y = np.asarray(y, dtype=float)
    return 2.0 * y - np.sin(2.0 * y)


def gamma_prime(y):
    # 2 - 2 cos 2y written as 4 sin^2 y to avoid cancellation
    return 4.0 * np.sin(np.asarray(y, dtype=float)) ** 2


def gamma_ppp(y):
    return 8.0 * np.cos(2.0 * np.asarray(y, dtype=float))


def gamma_over_cube(y, threshold=0.25):
    """``gamma(y) / y^3`` with its limit 4/3 at the origin."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < threshold
    y2 = np.where(small, y, 0.0) ** 2
    series = np.polyval(_SERIES[::-1], y2)
    safe = np.where(small, 1.0, y)
    direct = (2.0 * safe - np.sin(2.0 * safe)) / safe**3
    return np.where(small, series, direct)


def sin_over(y):
    """``sin(y) / y`` with value 1 at 0."""
    return np.sinc(np.asarray(y, dtype=float) / np.pi)


def _radii(grid_or_r):
    return getattr(grid_or_r, "nodes", grid_or_r)


def n0(u, grid, ctx=NonlinearityContext()):
    """Pointwise nonlinearity ``n0(u)`` at the radii of ``grid``.

    ``grid`` may be a :class:`RadialGrid` or an array of radii (for instance a
    similarity grid). At ``r = 0`` the value is the limit ``2(n-3)/3 u^3``.
    """
    u = np.asarray(u, dtype=float)
    r = _radii(grid)
    return 0.5 * (ctx.n - 3) * u**3 * gamma_over_cube(r * u, ctx.taylor_threshold)


def n0_derivative(u, grid, ctx=NonlinearityContext()):
    """``d n0 / du = 2 (n-3) u^2 (sin(r u) / (r u))^2``."""
    u = np.asarray(u, dtype=float)
    r = _radii(grid)
    return 2.0 * (ctx.n - 3) * u**2 * sin_over(r * u) ** 2


def potential_V(xi, n):
    """Linearization of ``n0`` at the blowup profile, ``8(n-4)(n-3)/(xi^2+n-4)^2``."""
    if n < 5:
        raise DomainError(f"n must be >= 5, got {n}")
    xi = np.asarray(xi, dtype=float)
    return 8.0 * (n - 4) * (n - 3) / (xi**2 + n - 4) ** 2


def N_perturbation(K, grid, ctx=NonlinearityContext()):
    """Superlinear remainder of the similarity nonlinearity around the profile.

    For a perturbation ``K`` of the field component this returns
    ``n(Phi + K) - n(Phi) - V K``. With ``a = xi Phi`` and ``b = xi K`` the
    addition formula for ``gamma`` gives

        gamma(a + b) - gamma(a) - gamma'(a) b = cos(2a) gamma(b) + 2 sin(2a) sin(b)^2,

    which is evaluated through ``gamma(b)/b^3`` and ``sin(b)/b`` so that it is
    visibly ``O(K^2)`` and finite at ``xi = 0``.

    ``K`` may be a :class:`StatePair` (the returned pair then has a zero first
    component) or a plain array of field values.
    """
    from .profiles import phi

    field = getattr(K, "u", K)
    field = np.asarray(field, dtype=float)
    xi = _radii(grid)
    Phi = phi(xi, ctx.n - 2)
    a2 = 2.0 * xi * Phi
    b = xi * field
    cubic = np.cos(a2) * field**3 * gamma_over_cube(b, ctx.taylor_threshold)
    quadratic = 4.0 * Phi * sin_over(a2) * field**2 * sin_over(b) ** 2
    out = 0.5 * (ctx.n - 3) * (cubic + quadratic)
    if hasattr(K, "u"):
        from .core import StatePair

        return StatePair(np.zeros_like(out), out)
    return out
