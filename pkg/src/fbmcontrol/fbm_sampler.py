"""Sampling of fractional Brownian motion on a uniform grid.

Two independent routes are provided. The Volterra sampler integrates the
kernel against local Gaussian coordinates of one Brownian path (see
:mod:`fbmcontrol.local_basis`) and also returns the running integral of the
path, which makes Wiener integrals of piecewise-linear integrands exact in
law up to quadrature. The Cholesky sampler factorizes the exact covariance
matrix and serves as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import local_basis as lb
from ._validation import ConfigError, NumericalError, check_hurst, check_positive
from .fbm_kernel import covariance, kstar_on_cells
from .grid import SampledFunction, TimeGrid
from .quadrature import tanh_sinh
from .rng import RngStream

MAX_JITTER_ESCALATIONS = 3
_JITTER_CAP = 1e-10


@dataclass(frozen=True)
class FbmPath:
    """One sampled fBm path.

    Attributes
    ----------
    grid : TimeGrid
    hurst : float
    values : ndarray, shape (n_steps + 1,)
        ``beta_H(t_i)``; ``values[0] == 0``.
    running_integral : ndarray or None
        ``int_0^{t_i} beta_H(r) dr`` at the nodes (Volterra paths only).
    noise : ndarray or None, shape (n_steps, 6)
        Standard normal cell coordinates of the driving Brownian motion.
        Column 0 is the normalized increment.
    method : str
    seed : int or None
        Root seed of the stream that produced the path.
    """

    grid: TimeGrid
    hurst: float
    values: np.ndarray
    running_integral: np.ndarray | None = None
    noise: np.ndarray | None = None
    method: str = "volterra"
    seed: int | None = None

    @property
    def driving_increments(self):
        """Brownian increments over each cell, or None for Cholesky paths."""
        if self.noise is None:
            return None
        return np.sqrt(self.grid.step) * self.noise[:, 0]

    @property
    def cell_means(self):
        """Average of the path over each cell (Volterra paths only)."""
        if self.running_integral is None:
            raise ConfigError("cell means need a Volterra path; sample with sample_fbm_volterra")
        return np.diff(self.running_integral) / self.grid.step

    def to_csv_rows(self):
        """Rows ``(t, value)`` for export."""
        return np.column_stack([self.grid.nodes, self.values])


def _check_grid(grid):
    if not isinstance(grid, TimeGrid):
        raise ConfigError(f"grid must be a TimeGrid, got {type(grid).__name__}")
    if grid.start != 0.0:
        raise ConfigError("fBm grids must start at 0")
    return grid


def draw_noise(rng, n_steps):
    """Cell coordinates of one Brownian path from the start of ``rng``.

    Interior cells use four coordinates and the first cell six; unused
    entries stay zero.
    """
    z = rng.normal(n_steps * lb.N_INTERIOR + lb.N_COORDS - lb.N_INTERIOR)
    noise = np.zeros((n_steps, lb.N_COORDS))
    noise[:, : lb.N_INTERIOR] = z[: n_steps * lb.N_INTERIOR].reshape(n_steps, lb.N_INTERIOR)
    noise[0, lb.N_INTERIOR :] = z[n_steps * lb.N_INTERIOR :]
    return noise


def path_from_noise(h, grid, noise, seed=None):
    """Volterra fBm path driven by given cell coordinates."""
    h = check_hurst(h)
    grid = _check_grid(grid)
    n = grid.n_steps
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (n, lb.N_COORDS):
        raise ConfigError(f"noise must have shape {(n, lb.N_COORDS)}, got {noise.shape}")
    vals, ints = lb.contract(h, n, noise)
    dt = grid.step
    values = np.concatenate([[0.0], dt**h * vals])
    running = np.concatenate([[0.0], dt ** (h + 1) * ints])
    return FbmPath(grid, h, values, running, noise, "volterra", seed)


def sample_fbm_volterra(h, grid, rng):
    """Sample fBm through the Volterra representation.

    Parameters
    ----------
    h : float
        Hurst index in ``(0, 1/2)``.
    grid : TimeGrid
        Grid starting at 0.
    rng : RngStream

    Returns
    -------
    FbmPath
    """
    h = check_hurst(h)
    grid = _check_grid(grid)
    return path_from_noise(h, grid, draw_noise(rng, grid.n_steps), rng.seed)


def refine_path(path, rng):
    """Same Brownian path on a grid with twice as many cells.

    Fine coordinates are drawn from their conditional law given the coarse
    ones, so the pair (coarse, fine) is exactly the joint law of two
    discretizations of a single Brownian motion.
    """
    if path.noise is None:
        raise ConfigError("only Volterra paths can be refined")
    h, n = path.hurst, path.grid.n_steps
    maps = lb.refinement_maps(h)
    eta = rng.normal((n, 10))
    fine = np.zeros((2 * n, lb.N_COORDS))
    for first, cells in ((True, slice(0, 1)), (False, slice(1, n))):
        p, low = maps[first]
        m = p.shape[0]
        xi = path.noise[cells, :m] @ p + eta[cells, : p.shape[1]] @ low.T
        split = lb.N_COORDS if first else lb.N_INTERIOR
        idx = np.arange(cells.start, cells.stop)
        fine[2 * idx, :split] = xi[:, :split]
        fine[2 * idx + 1, : lb.N_INTERIOR] = xi[:, split:]
    return path_from_noise(h, path.grid.refine(2), fine, path.seed)


def _factor_covariance(cov):
    """Cholesky factor with a bounded diagonal jitter fallback."""
    scale = float(np.max(np.diag(cov)))
    jitters = [0.0] + [_JITTER_CAP * scale * 10.0 ** (k - MAX_JITTER_ESCALATIONS + 1)
                       for k in range(MAX_JITTER_ESCALATIONS)]
    info = 0
    for jitter in jitters:
        low, info = lapack.dpotrf(cov + jitter * np.eye(cov.shape[0]), lower=1, clean=1)
        if info == 0:
            return low
    raise NumericalError(
        f"covariance factorization failed: leading minor of order {info} is not positive "
        f"definite after jitter {jitters[-1]:.3g}"
    )


def cholesky_factor(h, grid):
    """Lower Cholesky factor of the fBm covariance at nodes ``1..n``."""
    h = check_hurst(h)
    t = _check_grid(grid).nodes[1:]
    return _factor_covariance(covariance(h, t[:, None], t[None, :]))


def sample_fbm_cholesky(h, grid, rng):
    """Sample fBm exactly at the nodes by factorizing the covariance matrix.

    Raises
    ------
    NumericalError
        If the factorization fails after the jitter escalations, naming the
        offending leading minor.
    """
    h = check_hurst(h)
    low = cholesky_factor(h, grid)
    values = np.concatenate([[0.0], low @ rng.normal(grid.n_steps)])
    return FbmPath(grid, h, values, None, None, "cholesky", rng.seed)


def wiener_integral_scalar(h, phi, path, upto=None, method="ibp"):
    """Approximate ``int_0^{t_upto} phi d beta_H`` along one sampled path.

    Parameters
    ----------
    h : float
    phi : SampledFunction
        Integrand on the path grid. Piecewise-linear or step.
    path : FbmPath
    upto : int, optional
        Node index of the upper limit; defaults to the last node.
    method : {"ibp", "kstar"}
        ``"ibp"`` integrates by parts against the path values and running
        integral. ``"kstar"`` applies the transform ``K*`` and pairs it with
        the Brownian cell coordinates.

    Returns
    -------
    float
    """
    h = check_hurst(h)
    g = path.grid
    if path.noise is None:
        raise ConfigError("Wiener integrals need the driving Brownian path; sample with sample_fbm_volterra")
    if phi.grid != g:
        raise ConfigError("integrand and path must share a grid")
    if phi.values.ndim != 1:
        raise ConfigError("wiener_integral_scalar expects a scalar integrand")
    n = g.n_steps if upto is None else int(upto)
    if not 0 <= n <= g.n_steps:
        raise ConfigError(f"upto must lie in [0, {g.n_steps}], got {upto}")
    if n == 0:
        return 0.0
    f = phi.values
    if method == "ibp":
        if phi.kind == "step":
            return float(np.dot(f[:n], np.diff(path.values[: n + 1])))
        means = path.cell_means[:n]
        return float(f[n] * path.values[n] - np.dot(np.diff(f[: n + 1]), means))
    if method == "kstar":
        sub = TimeGrid(g.step * n, n)
        local = SampledFunction(sub, f[: n + 1], kind=phi.kind)
        v, u, w = tanh_sinh()
        ks = kstar_on_cells(h, local, v, u)
        coords = np.zeros((n, lb.N_COORDS))
        coords[0, :6] = (ks[0] * w) @ lb.cell_basis(h, True).table.T
        coords[1:, :4] = (ks[1:] * w) @ lb.cell_basis(h, False).table.T
        return float(np.sqrt(g.step) * np.sum(coords * path.noise[:n]))
    raise ConfigError(f"method must be 'ibp' or 'kstar', got {method!r}")


def empirical_covariance(paths):
    """Sample covariance of paths at nodes ``1..n`` with entrywise standard errors.

    Parameters
    ----------
    paths : ndarray, shape (M, n_steps + 1)

    Returns
    -------
    cov, se : ndarray, shape (n_steps, n_steps)
    """
    x = np.asarray(paths, dtype=float)[:, 1:]
    m = x.shape[0]
    if m < 2:
        raise ConfigError("need at least two paths")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (m - 1)
    # standard error of the mean of the centred products
    sq = (xc**2).T @ (xc**2) / m
    var = np.clip(sq - (xc.T @ xc / m) ** 2, 0.0, None) * m / (m - 1)
    return cov, np.sqrt(var / m)


class FbmSampler(BaseEstimator):
    """Estimator-style fBm sampler.

    ``fit`` precomputes the deterministic tables (moment tables or the
    covariance factor) and ``sample`` draws paths, one counter-based stream
    per path so results do not depend on how paths are batched.

    Parameters
    ----------
    hurst : float, default 0.25
    horizon : float, default 1.0
    n_steps : int, default 32
    method : {"volterra", "cholesky"}

    Attributes
    ----------
    grid_ : TimeGrid
    factor_ : ndarray
        Cholesky factor (``method="cholesky"`` only).
    """

    def __init__(self, hurst=0.25, horizon=1.0, n_steps=32, method="volterra"):
        self.hurst = hurst
        self.horizon = horizon
        self.n_steps = n_steps
        self.method = method

    def fit(self, X=None, y=None):
        check_hurst(self.hurst)
        self.grid_ = TimeGrid(self.horizon, self.n_steps)
        if self.method == "volterra":
            lb.moment_tables(self.hurst, self.n_steps)
        elif self.method == "cholesky":
            self.factor_ = cholesky_factor(self.hurst, self.grid_)
        else:
            raise ConfigError(f"method must be 'volterra' or 'cholesky', got {self.method!r}")
        return self

    def sample(self, n_paths, seed=0, stream_id=0):
        """Draw ``n_paths`` paths; returns an array of shape ``(n_paths, n_steps + 1)``."""
        check_is_fitted(self, "grid_")
        n_paths = check_positive(n_paths, "n_paths", integer=True)
        base = RngStream(seed, stream_id)
        n = self.n_steps
        out = np.zeros((n_paths, n + 1))
        if self.method == "cholesky":
            z = np.stack([base.child(p).normal(n) for p in range(n_paths)])
            out[:, 1:] = z @ self.factor_.T
            return out
        noise = np.stack([draw_noise(base.child(p), n) for p in range(n_paths)])
        vals, _ = lb.contract(self.hurst, n, noise)
        out[:, 1:] = self.grid_.step**self.hurst * vals
        return out
