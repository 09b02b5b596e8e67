"""Local Gaussian coordinates of Brownian motion for singular-kernel sampling.

Brownian motion on each grid cell is described by its coordinates along a
small orthonormal basis of ``L2(cell)``: the constant (the increment) plus
shapes that capture the algebraic singularities of the fractional kernel.
With ``v`` the position in the cell and ``u = 1 - v``, interior cells use

    1, v - 1/2, u^(H-1/2), u^(H+1/2)

and the first cell adds ``v^(H-1/2)`` and ``v^(1/2-H)`` for the singularity
at the origin. The coordinates are independent standard normals, so any
Wiener integral ``int psi dbeta`` is approximated by ``sum <psi, b_jk> xi_jk``.
Because ``K(t, .)`` is very nearly in the span of these shapes on each cell,
the resulting fBm has covariance errors orders of magnitude below those of
cell-averaged increments at the same resolution.

Tables of moments are computed on a unit step and rescaled by self-similarity:
``K(c t, c s) = c^(H-1/2) K(t, s)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import legvander

from ._validation import check_hurst, check_positive
from .fbm_kernel import integrated_kernel, kernel
from .quadrature import gauss_legendre, tanh_sinh

N_COORDS = 6  # coordinates per cell in noise arrays; interior cells use the first 4
N_INTERIOR = 4
_REGULAR_ORDER = 12
_TABLE_CACHE_LIMIT = 1024


def _raw_shapes(h, v, u, first):
    shapes = [np.ones_like(v), v - 0.5, u ** (h - 0.5), u ** (h + 0.5)]
    if first:
        shapes += [v ** (h - 0.5), v ** (0.5 - h)]
    return np.array(shapes)


@dataclass(frozen=True)
class CellBasis:
    """Orthonormal shapes on the unit cell.

    Attributes
    ----------
    hurst : float
    first : bool
        Whether this is the basis of the cell touching the origin.
    coef : ndarray, shape (m, m)
        Lower-triangular map from raw shapes to orthonormal shapes.
    table : ndarray, shape (m, P)
        Orthonormal shapes at the nodes of :func:`tanh_sinh`.
    """

    hurst: float
    first: bool
    coef: np.ndarray
    table: np.ndarray

    @property
    def size(self):
        return self.coef.shape[0]

    def __call__(self, v, u):
        """Orthonormal shapes at nodes ``v`` with complements ``u``."""
        return self.coef @ _raw_shapes(self.hurst, np.asarray(v), np.asarray(u), self.first)


@lru_cache(maxsize=None)
def cell_basis(h, first):
    """Orthonormalize the raw shapes by Cholesky factorization of their Gram matrix."""
    h = check_hurst(h)
    v, u, w = tanh_sinh()
    raw = _raw_shapes(h, v, u, first)
    gram = (raw * w) @ raw.T
    low = np.linalg.cholesky(gram)
    coef = np.linalg.inv(low)
    table = coef @ raw
    for arr in (coef, table):
        arr.setflags(write=False)
    return CellBasis(h, bool(first), coef, table)


@lru_cache(maxsize=None)
def _regular_projector(h):
    """Map from values at Gauss-Legendre nodes to moments against interior shapes.

    Valid for functions that are smooth across the cell: the interpolating
    polynomial is integrated exactly against the (singular) basis.
    """
    xq = np.asarray(gauss_legendre(_REGULAR_ORDER)[0])
    v, _, w = tanh_sinh()
    vand_q = legvander(2 * xq - 1, _REGULAR_ORDER - 1)
    vand_p = legvander(2 * v - 1, _REGULAR_ORDER - 1)
    lagrange = np.linalg.solve(vand_q.T, vand_p.T)  # (q, P) Lagrange polynomials at v
    proj = (lagrange * w) @ cell_basis(h, False).table.T
    proj.setflags(write=False)
    return xq, proj


def _unit_moment_rows(h, n, func, rows):
    """Moments ``<func(i, .), b_jk>`` on a unit-step grid for node indices ``rows``.

    Returns an array of shape ``(len(rows), n, N_COORDS)``.
    """
    v, u, w = tanh_sinh()
    first = cell_basis(h, True)
    inner = cell_basis(h, False)
    rows = np.asarray(rows)
    out = np.zeros((rows.size, n, N_COORDS))
    ti = rows[:, None].astype(float)
    # first cell: both endpoint singularities
    vals = func(h, ti, np.broadcast_to(v, (rows.size, v.size)), (ti - 1.0) + u)
    out[:, 0, : first.size] = vals @ (w * first.table).T
    # cell ending at the node itself
    diag = rows >= 2
    if np.any(diag):
        ri = rows[diag]
        s = (ri[:, None] - 1.0) + v
        vals = func(h, np.broadcast_to(ri[:, None].astype(float), s.shape), s, np.broadcast_to(u, s.shape))
        out[np.nonzero(diag)[0], ri - 1, :N_INTERIOR] = vals @ (w * inner.table).T
    # remaining cells see a smooth integrand
    xq, proj = _regular_projector(h)
    for r, i in enumerate(rows):
        if i < 3:
            continue
        j = np.arange(1, i - 1)[:, None]
        vals = func(h, float(i), j + xq, (i - j) - xq)
        out[r, 1 : i - 1, :N_INTERIOR] = vals @ proj
    return out


@lru_cache(maxsize=8)
def _cached_tables(h, n):
    rows = np.arange(1, n + 1)
    vt = _unit_moment_rows(h, n, kernel, rows)
    it = _unit_moment_rows(h, n, integrated_kernel, rows)
    for arr in (vt, it):
        arr.setflags(write=False)
    return vt, it


def moment_tables(h, n):
    """Unit-step moment tables for the value and running-integral functionals.

    Returns
    -------
    values_table, integral_table : ndarray, shape (n, n, N_COORDS)
        Row ``i - 1`` holds the coordinates of ``K(t_i, .)`` and of
        ``int_s^{t_i} K(r, .) dr`` on each cell. Physical values follow from
        ``step**H`` and ``step**(H + 1)`` scaling respectively.
    """
    h = check_hurst(h)
    n = check_positive(n, "n", integer=True)
    return _cached_tables(h, n)


def contract(h, n, noise, block=256):
    """Unit-step fBm values and running integrals at nodes ``1..n`` from noise.

    Parameters
    ----------
    noise : ndarray, shape (..., n, N_COORDS)

    Returns
    -------
    values, integrals : ndarray, shape (..., n)
    """
    h = check_hurst(h)
    flat = noise.reshape(noise.shape[:-2] + (-1,))
    if n <= _TABLE_CACHE_LIMIT:
        vt, it = _cached_tables(h, n)
        return flat @ vt.reshape(n, -1).T, flat @ it.reshape(n, -1).T
    vals = np.empty(noise.shape[:-2] + (n,))
    ints = np.empty_like(vals)
    for lo in range(1, n + 1, block):
        rows = np.arange(lo, min(lo + block, n + 1))
        vals[..., rows - 1] = flat @ _unit_moment_rows(h, n, kernel, rows).reshape(rows.size, -1).T
        ints[..., rows - 1] = flat @ _unit_moment_rows(h, n, integrated_kernel, rows).reshape(rows.size, -1).T
    return vals, ints


@lru_cache(maxsize=None)
def refinement_maps(h):
    """Joint law of coarse and fine coordinates of one Brownian path.

    For a coarse cell split in two halves, ``P[k, l] = <b_coarse_k, b_fine_l>``
    and ``L`` factors ``I - P^T P``. Fine coordinates consistent with given
    coarse ones are ``P^T xi_coarse + L eta`` with ``eta`` standard normal.

    Returns
    -------
    dict
        ``{True: (P, L), False: (P, L)}`` keyed by whether the coarse cell is
        the first one.
    """
    h = check_hurst(h)
    v, u, w = tanh_sinh()
    out = {}
    for first in (True, False):
        coarse = cell_basis(h, first)
        left = cell_basis(h, first).table
        right = cell_basis(h, False).table
        blocks = []
        # left half: coarse position v/2; right half: (1 + v)/2 with complement u/2
        for fine, cv, cu in ((left, 0.5 * v, 1.0 - 0.5 * v), (right, 0.5 * (1.0 + v), 0.5 * u)):
            blocks.append((coarse(cv, cu) * w) @ fine.T / np.sqrt(2.0))
        p = np.hstack(blocks)
        cond = np.eye(p.shape[1]) - p.T @ p
        evals, evecs = np.linalg.eigh(0.5 * (cond + cond.T))
        low = evecs * np.sqrt(np.clip(evals, 0.0, None))
        for arr in (p, low):
            arr.setflags(write=False)
        out[first] = (p, low)
    return out
