"""Resolvent of the heat equation with memory, mode by mode.

With ``A e_n = -n^2 e_n`` and ``B(t) = b(t) A``, the resolvent acts diagonally
in the sine basis, ``R(t) e_n = r_n(t) e_n``, where

    r_n'(t) = -n^2 r_n(t) - n^2 int_0^t b(t - s) r_n(s) ds,   r_n(0) = 1.

Each mode is advanced by an exponential trapezoidal step: the local term is
integrated exactly and the memory term by the trapezoidal rule, which is
implicit in the newest value. The scheme is second order in the step and
exact for ``b = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import ConfigError, NumericalError, check_positive

_SERIES_CUTOFF = 0.1


@dataclass(frozen=True)
class MemoryKernel:
    """Scalar memory kernel ``b(t) = amplitude * exp(-rate * t)``.

    ``rate = 0`` gives a constant kernel and ``amplitude = 0`` no memory.
    """

    amplitude: float = 0.0
    rate: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.amplitude):
            raise ConfigError("memory amplitude must be finite")
        check_positive(self.rate, "memory rate", allow_zero=True)

    def __call__(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))

    def derivative(self, t):
        return -self.rate * self(t)

    def total_variation(self, horizon):
        """``int_0^T |b'(t)| dt``."""
        return abs(self.amplitude) * -np.expm1(-self.rate * horizon)


def _phi_weights(z):
    """``phi1 = (1 - e^-z)/z`` and ``psi = (1 - e^-z - z e^-z)/z^2`` without cancellation."""
    z = np.asarray(z, dtype=float)
    phi1 = np.empty_like(z)
    psi = np.empty_like(z)
    small = z < _SERIES_CUTOFF
    zs = z[small]
    fact = 1.0
    p1 = np.zeros_like(zs)
    p2 = np.zeros_like(zs)
    for k in range(16):
        fact *= k + 1  # (k+1)!
        term = (-zs) ** k / fact
        p1 += term
        p2 += term * (k + 1) / (k + 2)
    phi1[small], psi[small] = p1, p2
    zl = z[~small]
    em = -np.expm1(-zl)
    phi1[~small] = em / zl
    psi[~small] = (em - zl * np.exp(-zl)) / zl**2
    return phi1, psi


@dataclass(frozen=True)
class ResolventFamily:
    """Tabulated resolvent ``r_n(t_j)``.

    Attributes
    ----------
    grid : TimeGrid
    kernel : MemoryKernel
    mode_values : ndarray, shape (n_steps + 1, N)
    """

    grid: TimeGrid
    kernel: MemoryKernel
    mode_values: np.ndarray

    @property
    def modes(self):
        return self.mode_values.shape[1]

    @property
    def eigenvalues(self):
        """Eigenvalues ``n^2`` of ``-A``."""
        return np.arange(1, self.modes + 1, dtype=float) ** 2

    @property
    def sup_norm(self):
        """``sup_t ||R(t)||`` over the grid."""
        return float(np.max(np.abs(self.mode_values)))

    @property
    def lipschitz_M(self):  # noqa: N802 - matches the usual symbol
        return lipschitz_constant(self)

    def apply(self, t_index, x):
        """``R(t_j) x`` for coordinate vectors ``x`` (last axis = modes)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.modes:
            raise ConfigError(f"x must have {self.modes} coordinates, got {x.shape[-1]}")
        if not 0 <= t_index <= self.grid.n_steps:
            raise ConfigError(f"t_index must lie in [0, {self.grid.n_steps}], got {t_index}")
        return self.mode_values[t_index] * x


def solve_modes(kernel, modes, grid):
    """Tabulate the resolvent on ``grid`` for modes ``1..modes``.

    Parameters
    ----------
    kernel : MemoryKernel
    modes : int
    grid : TimeGrid
        Grid starting at 0.

    Returns
    -------
    ResolventFamily

    Raises
    ------
    NumericalError
        If the implicit step degenerates or the solution is not finite.
    """
    modes = check_positive(modes, "modes", integer=True)
    if grid.start != 0.0:
        raise ConfigError("resolvent grids must start at 0")
    n, dt = grid.n_steps, grid.step
    lam = np.arange(1, modes + 1, dtype=float) ** 2
    b = kernel(grid.nodes)
    z = lam * dt
    decay = np.exp(-z)
    phi1, psi = _phi_weights(z)
    w_old, w_new = dt * psi, dt * (phi1 - psi)
    denom = 1.0 + w_new * lam * 0.5 * dt * b[0]
    if np.any(denom <= 0):
        raise NumericalError("implicit memory step is singular for this kernel and step")
    r = np.zeros((n + 1, modes))
    r[0] = 1.0
    g_old = np.zeros(modes)
    for j in range(n):
        # memory integral at t_{j+1} without the r_{j+1} term
        known = dt * (0.5 * b[j + 1] * r[0] + b[j:0:-1] @ r[1 : j + 1])
        r[j + 1] = (decay * r[j] + w_old * g_old - w_new * lam * known) / denom
        g_old = -lam * (known + 0.5 * dt * b[0] * r[j + 1])
    if not np.all(np.isfinite(r)):
        raise NumericalError("resolvent solution is not finite")
    return ResolventFamily(grid, kernel, r)


def memory_integrals(family, kernel=None):
    """Trapezoidal ``int_0^{t_j} b(t_j - s) r_n(s) ds`` at every node."""
    g = family.grid
    b = (family.kernel if kernel is None else kernel)(g.nodes)
    r = family.mode_values
    out = np.zeros_like(r)
    for j in range(1, g.n_steps + 1):
        out[j] = g.step * (b[j::-1] @ r[: j + 1] - 0.5 * (b[j] * r[0] + b[0] * r[j]))
    return out


def verify_resolvent_identity(family, x, kernel=None):
    """Largest residual of ``R'(t)x = A R(t)x + int_0^t B(t-s) R(s)x ds`` over interior nodes.

    Uses central differences for ``R'`` and the trapezoidal rule for the
    memory term, so the residual of a second-order solution vanishes at
    second order. ``kernel`` defaults to the one the family was built with.
    """
    x = np.asarray(x, dtype=float)
    g = family.grid
    r = family.mode_values
    lam = family.eigenvalues
    deriv = (r[2:] - r[:-2]) / (2 * g.step)
    mem = memory_integrals(family, kernel)[1:-1]
    res = (deriv + lam * r[1:-1] + lam * mem) * x
    return float(np.max(np.linalg.norm(res, axis=1)))


def lipschitz_constant(family, kernel=None):
    """Constant ``M = (1 + T |b(0)| + T int_0^T |b'|) sup ||R||`` of the Lipschitz estimate.

    ``||R(t)x - R(s)x|| <= M |t - s| ||x||_Z`` for ``x`` in the domain of the
    generator, with the graph norm ``||x||_Z = ||A x|| + ||x||``.
    """
    g = family.grid
    kern = family.kernel if kernel is None else kernel
    t_end = g.end
    return float(
        (1.0 + t_end * abs(float(kern(0.0))) + t_end * kern.total_variation(t_end)) * family.sup_norm
    )


def graph_norm(x):
    """``||A x|| + ||x||`` for coordinate vectors."""
    x = np.asarray(x, dtype=float)
    lam = np.arange(1, x.shape[-1] + 1, dtype=float) ** 2
    return np.linalg.norm(lam * x, axis=-1) + np.linalg.norm(x, axis=-1)


def exponential_bound(family):
    """Fitted ``(N, beta)`` with ``||R(t)|| <= N exp(beta t)`` on the grid, ``N = sup ||R||`` at 0."""
    g = family.grid
    env = np.max(np.abs(family.mode_values), axis=1)
    n0 = float(env[0])
    t = g.nodes[1:]
    with np.errstate(divide="ignore"):
        rates = np.log(np.maximum(env[1:], 1e-300) / n0) / t
    return n0, float(np.max(rates))


def semigroup_factor(grid, modes):
    """``exp(-n^2 t_j)``: the semigroup of the heat equation without memory."""
    lam = np.arange(1, modes + 1, dtype=float) ** 2
    return np.exp(-np.outer(grid.nodes, lam))


def constant_kernel_solution(b0, modes, t):
    """Closed-form ``r_n`` for a constant kernel ``b0``.

    Solves ``r'' + n^2 r' + n^2 b0 r = 0`` with ``r(0) = 1`` and
    ``r'(0) = -n^2``. A repeated root is nudged by a relative ``1e-9``.
    """
    t = np.asarray(t, dtype=float)[:, None]
    lam = np.arange(1, modes + 1, dtype=float) ** 2
    disc = (lam**2 - 4 * lam * b0).astype(complex)
    root = np.sqrt(disc)
    root = np.where(np.abs(root) < 1e-9 * lam, 1e-9 * lam, root)
    mu1 = 0.5 * (-lam + root)
    mu2 = 0.5 * (-lam - root)
    c1 = (-lam - mu2) / (mu1 - mu2)
    c2 = 1.0 - c1
    return np.real(c1 * np.exp(mu1 * t) + c2 * np.exp(mu2 * t))


def gramians(family, gains):
    """Mode Gramians ``gamma_n = int_0^T (r_n(T - s) l_n)^2 ds`` by the trapezoidal rule."""
    gains = np.asarray(gains, dtype=float)
    if gains.shape != (family.modes,):
        raise ConfigError(f"need {family.modes} gains, got shape {gains.shape}")
    sq = (family.mode_values * gains) ** 2
    g = family.grid
    return g.step * (sq.sum(axis=0) - 0.5 * (sq[0] + sq[-1]))
