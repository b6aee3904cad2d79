"""Additive radial Gaussian noise and its exact stochastic convolution.

The driving process is ``W_t = sum_k sigma_k B^k_t e_k`` with independent
Brownian motions ``B^k`` and the eigenvectors ``e_k`` of ``-Delta_h``. Each
mode of the stochastic convolution solves a driven oscillator

    dz = z_hat dt,    dz_hat = -omega^2 z dt + sigma dB,    omega^2 = lambda,

whose transition over a step ``dt`` is Gaussian and known in closed form.
Per step and mode three correlated Gaussians are drawn, scaled to unit
``sigma``:

    B = int dB,   X = int sin(omega (dt - s)) / omega dB,   Y = int cos(omega (dt - s)) dB.

``(X, Y)`` is the innovation of ``(z, z_hat)``; ``B`` is kept so that the
direct-stepping solver sees the same Brownian path.
"""
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DomainError, ShapeError
from .physics import gamma_over_cube

__all__ = [
    "NoiseModel",
    "NoisePath",
    "ConvolutionPath",
    "splitmix64",
    "path_seed",
    "step_covariance",
    "mode_variance",
    "sample_path",
    "sample_convolution",
    "propagate",
    "evaluate_z",
    "write_path",
    "read_path",
]

_MAGIC = b"CBLZ1"
_MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One round of the splitmix64 finalizer on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def path_seed(run_seed, index):
    """Seed of path ``index`` in a run, independent of scheduling order."""
    return splitmix64(splitmix64(int(run_seed) & _MASK64) ^ (int(index) & _MASK64))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Spectral power law ``sigma_k = c (1 + lambda_k)^(-beta/2)`` on the first ``modes`` modes.

    Parameters
    ----------
    basis : ModalBasis
    amplitude : float
        ``c >= 0``. Zero switches the noise off.
    beta : float
        Spectral decay. Must exceed ``regularity + 1/2`` so that the
        covariance is trace class in ``H^regularity``.
    modes : int
        Number of forced modes ``M``.
    regularity : float, optional
        Sobolev index the covariance must be trace class in; defaults to
        ``k + (n+1)/2`` with ``k = 6``.
    """

    basis: object = field(repr=False)
    amplitude: float = 0.05
    beta: float = 11.0
    modes: int = 64
    regularity: float = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise ConfigError(f"noise amplitude must be >= 0, got {self.amplitude}")
        if not 1 <= self.modes <= self.basis.size:
            raise ConfigError(f"modes = {self.modes} outside [1, {self.basis.size}]")
        if self.regularity is None:
            object.__setattr__(self, "regularity", 6 + (self.basis.n + 1) / 2)
        # lambda_k grows like k^2 on a ball, so sum (1+lambda_k)^(reg-beta)
        # converges in the continuum limit iff beta - reg > 1/2
        if not self.beta - self.regularity > 0.5:
            raise ConfigError(
                f"beta = {self.beta} too small for trace class in H^{self.regularity}")

    @cached_property
    def omegas(self):
        return np.sqrt(self.basis.eigenvalues[: self.modes])

    @cached_property
    def sigmas(self):
        lam = self.basis.eigenvalues[: self.modes]
        return self.amplitude * (1.0 + lam) ** (-self.beta / 2.0)

    def trace_bound(self):
        """``sum_k sigma_k^2 (1 + lambda_k)^regularity`` over the forced modes."""
        lam = self.basis.eigenvalues[: self.modes]
        return float(np.sum(self.sigmas**2 * (1.0 + lam) ** self.regularity))

    def scaled(self, amplitude):
        return NoiseModel(self.basis, amplitude, self.beta, self.modes, self.regularity)


def step_covariance(omega, dt):
    """Covariance of ``(B, X, Y)`` over one step, unit ``sigma``.

    ``omega`` may be an array; the result then has shape ``omega.shape + (3, 3)``.
    Every entry is written through ``sin(x)/x``-type quotients so that
    ``omega -> 0`` reproduces the Brownian limits continuously.
    """
    omega = np.asarray(omega, dtype=float)
    x = omega * dt
    sx = np.sinc(x / np.pi)             # sin x / x
    sh = np.sinc(x / (2 * np.pi))       # sin(x/2) / (x/2)
    s2x = np.sinc(2 * x / np.pi)        # sin 2x / 2x
    c = np.empty(omega.shape + (3, 3))
    c[..., 0, 0] = dt
    c[..., 0, 1] = c[..., 1, 0] = 0.5 * dt**2 * sh**2
    c[..., 0, 2] = c[..., 2, 0] = dt * sx
    c[..., 1, 1] = dt**3 * gamma_over_cube(x) / 4.0
    c[..., 2, 2] = 0.5 * dt * (1.0 + s2x)
    c[..., 1, 2] = c[..., 2, 1] = 0.5 * dt**2 * sx**2
    return c


def mode_variance(model, k, t):
    """``(Var z_k, Var z_hat_k, Cov(z_k, z_hat_k))`` at time ``t`` from zero data."""
    if not 0 <= k < model.modes:
        raise DomainError(f"mode {k} is not forced (modes = {model.modes})")
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    if t == 0:
        return 0.0, 0.0, 0.0
    c = step_covariance(model.omegas[k], t)
    s2 = model.sigmas[k] ** 2
    return float(s2 * c[1, 1]), float(s2 * c[2, 2]), float(s2 * c[1, 2])


def _conditional_factors(cov):
    # B = sqrt(dt) g0, then (X, Y) | B by a 2x2 Cholesky of the Schur complement
    dt = cov[..., 0, 0]
    bx = cov[..., 0, 1] / dt
    by = cov[..., 0, 2] / dt
    sxx = np.maximum(cov[..., 1, 1] - cov[..., 0, 1] ** 2 / dt, 0.0)
    sxy = cov[..., 1, 2] - cov[..., 0, 1] * cov[..., 0, 2] / dt
    syy = cov[..., 2, 2] - cov[..., 0, 2] ** 2 / dt
    l11 = np.sqrt(sxx)
    l21 = np.where(l11 > 0, sxy / np.where(l11 > 0, l11, 1.0), 0.0)
    l22 = np.sqrt(np.maximum(syy - l21**2, 0.0))
    return bx, by, l11, l21, l22


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Per-step, per-mode Gaussian draws for one realization.

    ``increments`` has shape ``(modes, 3, steps)``; channel 0 is the
    Brownian increment ``sigma_k dB``, channels 1 and 2 the innovations of
    ``z_k`` and ``z_hat_k``.
    """

    dt: float
    steps: int
    seed: int
    increments: np.ndarray = field(repr=False)

    @property
    def modes(self):
        return self.increments.shape[0]

    @property
    def t_final(self):
        return self.steps * self.dt


def _steps_for(dt, t_final):
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    steps = int(round(t_final / dt))
    if steps < 0 or abs(steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise DomainError(f"t_final = {t_final} is not a multiple of dt = {dt}")
    return steps


def sample_path(model, dt, t_final, seed):
    """Draw the Gaussian increments of one noise realization."""
    steps = _steps_for(dt, t_final)
    rng = np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
    g = rng.standard_normal((3, steps, model.modes))
    bx, by, l11, l21, l22 = _conditional_factors(step_covariance(model.omegas, dt))
    b = np.sqrt(dt) * g[0]
    x = bx * b + l11 * g[1]
    y = by * b + l21 * g[1] + l22 * g[2]
    inc = np.stack([b, x, y]) * model.sigmas
    return NoisePath(dt, steps, int(seed), np.ascontiguousarray(inc.transpose(2, 0, 1)))


@dataclass(frozen=True, eq=False)
class ConvolutionPath:
    """Modal stochastic convolution ``(z, z_hat)`` at the step times ``j dt``.

    ``z`` and ``z_hat`` have shape ``(steps + 1, modes)``.
    """

    basis: object = field(repr=False)
    noise: NoisePath = field(repr=False)
    z: np.ndarray = field(repr=False)
    z_hat: np.ndarray = field(repr=False)

    @property
    def dt(self):
        return self.noise.dt

    @property
    def t_final(self):
        return self.noise.t_final

    def modal_at(self, t):
        """Modal coefficients at time ``t``, linear in time between steps."""
        if not -1e-12 <= t <= self.t_final + 1e-12:
            raise DomainError(f"t = {t} outside [0, {self.t_final}]")
        s = min(max(t / self.dt, 0.0), self.noise.steps)
        j = min(int(np.floor(s)), max(self.noise.steps - 1, 0))
        w = s - j
        if self.noise.steps == 0:
            return self.z[0], self.z_hat[0]
        return ((1 - w) * self.z[j] + w * self.z[j + 1],
                (1 - w) * self.z_hat[j] + w * self.z_hat[j + 1])

    def physical_at(self, t):
        """Grid samples of ``(z, z_hat)`` at time ``t``."""
        a, b = self.modal_at(t)
        return self.basis.synthesize(a), self.basis.synthesize(b)

    def physical_step(self, j):
        return self.basis.synthesize(self.z[j]), self.basis.synthesize(self.z_hat[j])


def propagate(omega, dt, z, z_hat):
    """Free oscillator flow over ``dt`` (exact, modal)."""
    x = omega * dt
    c, s = np.cos(x), np.sin(x)
    return c * z + dt * np.sinc(x / np.pi) * z_hat, -omega * s * z + c * z_hat


def sample_convolution(model, dt, t_final, seed=None, path=None):
    """Exact stochastic convolution of the wave semigroup along one noise path.

    Either ``seed`` or a precomputed ``path`` must be given.
    """
    if path is None:
        if seed is None:
            raise DomainError("either seed or path is required")
        path = sample_path(model, dt, t_final, seed)
    elif abs(path.dt - dt) > 1e-15 or path.modes != model.modes:
        raise ShapeError("noise path does not match the model or the step")
    steps = path.steps
    z = np.zeros((steps + 1, model.modes))
    zh = np.zeros((steps + 1, model.modes))
    omega = model.omegas
    for j in range(steps):
        a, b = propagate(omega, dt, z[j], zh[j])
        z[j + 1] = a + path.increments[:, 1, j]
        zh[j + 1] = b + path.increments[:, 2, j]
    return ConvolutionPath(model.basis, path, z, zh)


def evaluate_z(conv, t, r):
    """``(z, z_hat)`` at time ``t`` and radii ``r``.

    Linear in time between steps and cubic in space (spline through the
    grid samples, extended evenly across the origin and by zero at ``r_max``).
    """
    grid = conv.basis.grid
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > grid.r_max + 1e-12):
        raise DomainError(f"radii must lie in [0, {grid.r_max}]")
    z, zh = conv.physical_at(t)
    nodes = grid.nodes
    knots = np.concatenate([-nodes[::-1], nodes, [grid.r_max]])
    out = []
    for f in (z, zh):
        vals = np.concatenate([f[::-1], f, [0.0]])
        out.append(CubicSpline(knots, vals)(r))
    return out[0], out[1]


def write_path(path, fh):
    """Binary dump: magic, (steps, modes, channels) as uint64, dt, seed, then data.

    Data are little-endian float64 in (mode, channel, step) order.
    """
    modes, channels, steps = path.increments.shape
    fh.write(_MAGIC)
    fh.write(struct.pack("<QQQdQ", steps, modes, channels, path.dt, path.seed & _MASK64))
    fh.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def read_path(fh):
    magic = fh.read(len(_MAGIC))
    if magic != _MAGIC:
        raise ValueError(f"not a noise path file (magic {magic!r})")
    steps, modes, channels, dt, seed = struct.unpack("<QQQdQ", fh.read(40))
    data = np.frombuffer(fh.read(8 * steps * modes * channels), dtype="<f8")
    if data.size != steps * modes * channels:
        raise ValueError("truncated noise path file")
    return NoisePath(dt, steps, seed, data.reshape(modes, channels, steps).astype(float))
