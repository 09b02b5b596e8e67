"""Hilbert-space-valued fBm with trace-class covariance and diagonal noise coefficients.

Noise lives in coordinates of the sine basis ``e_n(xi) = sqrt(2/pi) sin(n xi)``:
``B_H(t) = sum_n sqrt(lambda_n) beta_n(t) e_n`` with independent scalar fBms
``beta_n`` of the same Hurst index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from ._validation import ConfigError, check_hurst, check_positive
from .fbm_sampler import FbmPath, sample_fbm_volterra, refine_path, wiener_integral_scalar
from .grid import SampledFunction, TimeGrid


@dataclass(frozen=True)
class CovarianceSpec:
    """Diagonal covariance operator ``Q e_n = lambda_n e_n``.

    Parameters
    ----------
    eigenvalues : array_like
        Non-negative, finite ``lambda_1, ..., lambda_N``.
    """

    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ConfigError("eigenvalues must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ConfigError("eigenvalues must be finite and non-negative")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def modes(self):
        return self.eigenvalues.size

    @property
    def trace(self):
        return float(self.eigenvalues.sum())

    @property
    def tail_ratio(self):
        """Share of the trace carried by the upper half of the modes."""
        if self.trace == 0:
            return 0.0
        return float(self.eigenvalues[self.modes // 2 :].sum() / self.trace)

    @classmethod
    def power_law(cls, modes, decay=2.0, scale=1.0):
        """``lambda_n = scale * n^(-decay)``."""
        modes = check_positive(modes, "modes", integer=True)
        return cls(scale * np.arange(1, modes + 1, dtype=float) ** (-decay))


@dataclass(frozen=True)
class QfbmPath:
    """Coordinates of one Q-fBm path.

    Attributes
    ----------
    eigenvalues : ndarray, shape (N,)
    mode_paths : tuple of FbmPath
        Standard scalar fBms ``beta_n``.
    """

    eigenvalues: np.ndarray
    mode_paths: tuple

    @property
    def grid(self):
        return self.mode_paths[0].grid

    @property
    def hurst(self):
        return self.mode_paths[0].hurst

    @property
    def values(self):
        """``sqrt(lambda_n) beta_n(t_i)``, shape ``(n_steps + 1, N)``."""
        raw = np.column_stack([p.values for p in self.mode_paths])
        return raw * np.sqrt(self.eigenvalues)

    def to_csv_rows(self):
        """Rows ``(t, mode_1, ..., mode_N)``."""
        return np.column_stack([self.grid.nodes, self.values])

    def refine(self, rng):
        """Same Brownian paths on a grid with twice as many cells."""
        paths = tuple(refine_path(p, rng.child(k)) for k, p in enumerate(self.mode_paths))
        return QfbmPath(self.eigenvalues, paths)


def sample_qfbm(q, h, grid, rng):
    """Sample Q-fBm; mode ``n`` is driven by the sub-stream ``rng.child(n - 1)``."""
    h = check_hurst(h)
    paths = tuple(sample_fbm_volterra(h, grid, rng.child(k)) for k in range(q.modes))
    return QfbmPath(q.eigenvalues, paths)


@dataclass(frozen=True)
class DiagonalNoiseCoefficient:
    """Noise coefficient acting as ``sigma(t) e_n = s_n(t) e_n``.

    Parameters
    ----------
    mode_functions : SampledFunction
        Values ``s_n(t_i)`` with shape ``(n_steps + 1, N)``.
    holder_constant : float
        Declared ``C5`` in ``|s_n(t) - s_n(r)| <= C5 / sqrt(lambda_n) |t - r|^gamma``.
    holder_exponent : float
        Declared ``gamma``; must exceed ``1/2 - H``.
    """

    mode_functions: SampledFunction
    holder_constant: float
    holder_exponent: float

    def __post_init__(self):
        if self.mode_functions.values.ndim != 2:
            raise ConfigError("mode_functions must hold one column per mode")
        check_positive(self.holder_constant, "holder_constant", allow_zero=True)
        check_positive(self.holder_exponent, "holder_exponent")
        if self.holder_exponent > 1:
            raise ConfigError("holder_exponent must not exceed 1")

    @property
    def grid(self):
        return self.mode_functions.grid

    @property
    def modes(self):
        return self.mode_functions.values.shape[1]

    @classmethod
    def modulated(cls, grid, q, level, decay=2.0, modulation=0.0):
        """``s_n(t) = level * n^(-decay) * (1 + modulation * sin(2 pi t))``.

        The Hölder data are set to exponent 1 and the smallest valid constant.
        """
        n = np.arange(1, q.modes + 1, dtype=float)
        amp = level * n ** (-decay)
        vals = amp[None, :] * (1.0 + modulation * np.sin(2 * np.pi * grid.nodes))[:, None]
        c5 = float(np.max(np.sqrt(q.eigenvalues) * np.abs(amp)) * 2 * np.pi * abs(modulation))
        return cls(SampledFunction(grid, vals), c5, 1.0)

    def l20_norm_squared(self, q):
        """``||sigma(t_i)||^2_{L2^0} = sum_n lambda_n s_n(t_i)^2`` at every node."""
        if q.modes != self.modes:
            raise ConfigError(f"noise coefficient has {self.modes} modes, covariance has {q.modes}")
        return (self.mode_functions.values**2) @ q.eigenvalues

    def validate(self, h, q):
        """Check the regularity conditions against ``h`` and ``q``.

        Returns
        -------
        dict
            ``holder_ratio`` (largest observed ratio of increment to the
            declared bound, must be <= 1) and ``summability`` (the quantity
            ``int_0^T sum_n lambda_n n^4 s_n(t)^2 dt``, reported only).

        Raises
        ------
        ConfigError
            If ``gamma <= 1/2 - H``, the mode count differs from ``q`` or the
            discrete Hölder check fails.
        """
        h = check_hurst(h)
        if q.modes != self.modes:
            raise ConfigError(f"noise coefficient has {self.modes} modes, covariance has {q.modes}")
        if self.holder_exponent <= 0.5 - h:
            raise ConfigError(
                f"holder_exponent {self.holder_exponent} must exceed 1/2 - H = {0.5 - h}"
            )
        t = self.grid.nodes
        dt = np.abs(t[:, None] - t[None, :]) ** self.holder_exponent
        worst = 0.0
        for k in range(self.modes):
            lam = q.eigenvalues[k]
            if lam == 0:
                continue
            s = self.mode_functions.values[:, k]
            diff = np.abs(s[:, None] - s[None, :])
            bound = self.holder_constant / np.sqrt(lam) * dt
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(diff > 1e-14, diff / bound, 0.0)
            worst = max(worst, float(np.max(ratio)))
        if worst > 1.0 + 1e-9:
            raise ConfigError(f"noise coefficient violates its declared Hölder bound (ratio {worst:.4g})")
        n4 = np.arange(1, self.modes + 1, dtype=float) ** 4
        dens = (self.mode_functions.values**2) @ (q.eigenvalues * n4)
        g = self.grid
        summ = float(g.step * (dens.sum() - 0.5 * (dens[0] + dens[-1])))
        return {"holder_ratio": worst, "summability": summ}


def wiener_integral_operator(sigma, q, h, noise, upto=None, weight=None):
    """Mode-wise ``sqrt(lambda_n) int_0^{t_upto} w_n(s) s_n(s) d beta_n(s)``.

    Parameters
    ----------
    sigma : DiagonalNoiseCoefficient
    q : CovarianceSpec
    h : float
    noise : QfbmPath
    upto : int, optional
        Node index of the upper limit.
    weight : SampledFunction, optional
        Per-mode weight ``w_n`` (for example a resolvent factor already
        composed with ``t - s``); defaults to 1.

    Returns
    -------
    ndarray, shape (N,)
    """
    g = noise.grid
    if sigma.grid != g:
        raise ConfigError("noise coefficient and noise must share a grid")
    s = sigma.mode_functions.values
    w = np.ones_like(s) if weight is None else weight.values
    out = np.zeros(q.modes)
    for k in range(q.modes):
        if q.eigenvalues[k] == 0:
            continue
        phi = SampledFunction(g, w[:, k] * s[:, k])
        out[k] = np.sqrt(q.eigenvalues[k]) * wiener_integral_scalar(h, phi, noise.mode_paths[k], upto)
    return out


def convolution_integrals(kernel_values, sigma, q, noise):
    """Stochastic convolutions ``sqrt(lambda_n) int_0^{t_i} k_n(t_i - s) s_n(s) d beta_n(s)`` at every node.

    Equivalent to :func:`wiener_integral_operator` with weight ``k_n(t_i - .)``
    at each node ``i``, computed for all nodes at once by integrating by parts
    and convolving.

    Parameters
    ----------
    kernel_values : ndarray, shape (n_steps + 1, N)
        ``k_n(t_j)`` at the nodes.

    Returns
    -------
    ndarray, shape (n_steps + 1, N)
    """
    g = noise.grid
    n = g.n_steps
    s = sigma.mode_functions.values
    out = np.zeros((n + 1, q.modes))
    for k in range(q.modes):
        lam = q.eigenvalues[k]
        if lam == 0:
            continue
        path = noise.mode_paths[k]
        kv, sv = kernel_values[:, k], s[:, k]
        means = path.cell_means
        a = sv[1:] * means
        b = sv[:-1] * means
        first = fftconvolve(kv[:n], a)[:n]
        second = fftconvolve(kv[1:], b)[:n]
        out[1:, k] = kv[0] * sv[1:] * path.values[1:] - first + second
        out[:, k] *= np.sqrt(lam)
    return out
