"""Volterra kernel of fractional Brownian motion with Hurst index below 1/2.

The process is represented as ``beta_H(t) = int_0^t K(t, s) dbeta(s)`` for a
standard Brownian motion ``beta``. Everything here is deterministic: the
covariance, the kernel and its time derivative, the running integral of the
kernel, the adjoint transform ``K*`` and the associated Hilbert-space norm.

The kernel is evaluated in closed form through the regularized incomplete
beta function. With ``x = s / t``,

    K(t, s) = c_H [ (t/s)^(H-1/2) (t-s)^(H-1/2)
                    + (1/2 - H) B(1-2H, H+1/2) s^(H-1/2) (1 - I_x(1-2H, H+1/2)) ].
"""

from __future__ import annotations

import numpy as np
from scipy.special import betainc, gammaln

from ._validation import ConfigError, check_hurst, check_times
from .grid import SampledFunction
from .quadrature import tanh_sinh

# below this relative gap the kernel is reported as 0
DIAGONAL_CUTOFF = 1e-12

_CHUNK = 2_000_000


def _beta_fn(a, b):
    return np.exp(gammaln(a) + gammaln(b) - gammaln(a + b))


def covariance(h, s, t):
    """Covariance ``R_H(s, t) = (t^2H + s^2H - |t - s|^2H) / 2``.

    Parameters
    ----------
    h : float
        Hurst index in ``(0, 1/2)``.
    s, t : array_like
        Non-negative times; broadcast against each other.

    Returns
    -------
    ndarray
    """
    h = check_hurst(h)
    s = check_times(s, "s")
    t = check_times(t, "t")
    return 0.5 * (t ** (2 * h) + s ** (2 * h) - np.abs(t - s) ** (2 * h))


def normalization_constant(h):
    """Constant ``c_H = sqrt(2H / ((1 - 2H) B(1 - 2H, H + 1/2)))``."""
    h = check_hurst(h)
    return float(np.sqrt(2 * h / ((1 - 2 * h) * _beta_fn(1 - 2 * h, h + 0.5))))


def _prepare(t, s, gap):
    """Broadcast inputs; return (t, s, gap, cutoff)."""
    t = check_times(t, "t")
    s = check_times(s, "s")
    if gap is None:
        t, s = np.broadcast_arrays(t, s)
        # a subtracted gap is rounding noise this close to the diagonal
        return t, s, t - s, DIAGONAL_CUTOFF * t
    t, s, d = np.broadcast_arrays(t, s, np.asarray(gap, dtype=float))
    return t, s, d, 0.0


def _reject_origin(s, d):
    if np.any((s <= 0) & (d > 0)):
        raise ConfigError("the kernel is singular at s = 0; need s > 0 whenever t > s")


def kernel(h, t, s, gap=None):
    """Volterra kernel ``K(t, s)``.

    Parameters
    ----------
    h : float
        Hurst index in ``(0, 1/2)``.
    t, s : array_like
        Non-negative times.
    gap : array_like, optional
        ``t - s`` computed by the caller. Pass it when ``s`` is within a few
        ulps of ``t`` and the difference is known more accurately than the
        floating-point subtraction.

    Returns
    -------
    ndarray
        ``K(t, s)``; zero for ``t <= s``.
        Without ``gap``, points with ``t - s <= 1e-12 * t`` are also
        reported as zero since the subtracted gap carries no digits there.

    Raises
    ------
    ConfigError
        If ``s = 0 < t`` or any time is negative.
    """
    h = check_hurst(h)
    t, s, d, cut = _prepare(t, s, gap)
    _reject_origin(s, d)
    out = np.zeros(t.shape)
    ok = d > cut
    tv, sv, dv = t[ok], s[ok], d[ok]
    a, b = 1 - 2 * h, h + 0.5
    # 1 - I_{s/t}(a, b) == I_{d/t}(b, a), which avoids cancellation near s = t
    first = (sv / tv) ** (0.5 - h) * dv ** (h - 0.5)
    second = (0.5 - h) * _beta_fn(a, b) * sv ** (h - 0.5) * betainc(b, a, dv / tv)
    out[ok] = normalization_constant(h) * (first + second)
    return out


def kernel_dt(h, t, s, gap=None):
    """Time derivative ``dK/dt = c_H (H - 1/2) (t/s)^(H-1/2) (t-s)^(H-3/2)``.

    Raises
    ------
    ConfigError
        If any ``t <= s`` or ``s <= 0``.
    """
    h = check_hurst(h)
    t, s, d, cut = _prepare(t, s, gap)
    if np.any(d <= cut) or np.any(s <= 0):
        raise ConfigError("kernel_dt requires 0 < s < t")
    return normalization_constant(h) * (h - 0.5) * (s / t) ** (0.5 - h) * d ** (h - 1.5)


def integrated_kernel(h, t, s, gap=None):
    """Running integral ``int_s^t K(r, s) dr`` of the kernel in its first argument.

    Closed form in terms of the same incomplete beta function as the kernel.
    Zero for ``t <= s``; ``gap`` and errors are as in :func:`kernel`.
    """
    h = check_hurst(h)
    t, s, d, cut = _prepare(t, s, gap)
    _reject_origin(s, d)
    out = np.zeros(t.shape)
    ok = d > cut
    tv, sv, dv = t[ok], s[ok], d[ok]
    a, b = 1 - 2 * h, h + 0.5
    big_b = _beta_fn(a, b)
    x, y = sv / tv, dv / tv
    tail = betainc(b, a, y)
    # int_x^1 w^(-2H-1) (1-w)^(H-1/2) dw, reduced to a positive first parameter
    u_int = x ** (-2 * h) * y**b / (2 * h) - (0.5 - h) / (2 * h) * big_b * tail
    val = b * sv**b * u_int + (0.5 - h) * big_b * tv * sv ** (h - 0.5) * tail
    out[ok] = normalization_constant(h) * val
    return out


def _locate(grid, points):
    """Map points to (cell, v, u) with ``s = t_cell + step * v`` and ``u = 1 - v``."""
    pos = (np.asarray(points, dtype=float) - grid.start) / grid.step
    cell = np.clip(np.floor(pos).astype(int), 0, grid.n_steps - 1)
    v = pos - cell
    return cell, v, 1.0 - v


def _kstar_local(h, phi, cell, v, u):
    """``K*`` transform at ``s = t_cell + step * v`` with accurate complements ``u``."""
    g = phi.grid
    n, dt = g.n_steps, g.step
    vals = phi.values
    s = dt * (cell + v)
    out = np.empty(cell.shape)
    m = np.arange(n)
    cH = normalization_constant(h)
    per = max(1, _CHUNK // max(n, 1))
    for lo in range(0, cell.size, per):
        sl = slice(lo, lo + per)
        c, uu, ss = cell[sl, None], u[sl, None], s[sl, None]
        k = c + 1 + m  # node index of the m-th node to the right of s
        valid = k <= n
        kk = np.minimum(k, n)
        rho = dt * (m + uu)  # t_k - s
        if phi.kind == "step":
            jumps = np.empty(n + 1)
            jumps[0] = 0.0
            jumps[1:] = vals[:-1] - np.append(vals[1:-1], 0.0)
            dk = np.where(valid, jumps[kk], 0.0)
            used = np.any(dk != 0, axis=0)
            kv = np.zeros(dk.shape)
            if np.any(used):
                tk = g.start + dt * kk[:, used]
                kv[:, used] = kernel(h, tk, np.broadcast_to(ss, tk.shape), gap=rho[:, used])
            kv = np.where(valid, kv, 0.0)
            out[sl] = np.sum(dk * kv, axis=1)
            continue
        phi_s = vals[cell[sl]] * u[sl] + vals[np.minimum(cell[sl] + 1, n)] * v[sl]
        tk = g.start + dt * kk
        f = np.where(valid, (vals[kk] - phi_s[:, None]) * (ss / tk) ** (0.5 - h), 0.0)
        p1, p2 = h - 0.5, h + 0.5  # alpha + 1 and alpha + 2 for alpha = H - 3/2
        # first piece [s, t_{cell+1}]: F rises linearly from F(s) = 0
        integral = f[:, 0] * rho[:, 0] ** p1 / p2
        ra, rb = rho[:, :-1], rho[:, 1:]
        seg = valid[:, 1:]
        with np.errstate(invalid="ignore", divide="ignore"):
            m0 = (rb**p1 - ra**p1) / p1
            m1 = (rb**p2 - ra**p2) / p2
            wb = (m1 - ra * m0) / dt
            wa = m0 - wb
        pieces = np.where(seg, wa * f[:, :-1] + wb * f[:, 1:], 0.0)
        integral = integral + pieces.sum(axis=1)
        t_end = np.full(ss.shape[0], g.end)
        k_end = kernel(h, t_end, ss[:, 0], gap=dt * (n - cell[sl] - 1 + u[sl]))
        out[sl] = k_end * phi_s + cH * (h - 0.5) * integral
    return out


def kstar_transform(h, phi, points=None):
    """Adjoint transform ``(K* phi)(s) = K(T, s) phi(s) + int_s^T (phi(r) - phi(s)) dK/dr(r, s) dr``.

    Piecewise-linear ``phi`` uses product integration: ``(phi(r) - phi(s)) (r/s)^(H-1/2)``
    is interpolated linearly between nodes and integrated exactly against
    ``(r - s)^(H - 3/2)``. Step ``phi`` (``kind="step"``) is a sum of
    indicators ``1_[0, t_k)`` and transforms exactly to ``sum_k d_k K(t_k, s)``.

    Parameters
    ----------
    h : float
        Hurst index in ``(0, 1/2)``.
    phi : SampledFunction
        Scalar function on a grid starting at 0; its right endpoint is ``T``.
    points : array_like, optional
        Evaluation points in ``[0, T]``. Defaults to the grid nodes.

    Returns
    -------
    SampledFunction or ndarray
        A :class:`SampledFunction` on the grid of ``phi`` when ``points`` is
        omitted, otherwise an array. The transform is singular at ``s = 0``
        unless ``phi(0) = 0``; that point is reported as NaN.
    """
    h = check_hurst(h)
    if phi.values.ndim != 1:
        raise ConfigError("kstar_transform expects a scalar SampledFunction")
    if phi.grid.start != 0.0:
        raise ConfigError("kstar_transform expects a grid starting at 0")
    g = phi.grid
    pts = g.nodes if points is None else check_times(points, "points")
    if np.any(pts > g.end * (1 + 1e-12)):
        raise ConfigError(f"points must lie in [0, {g.end}]")
    pts = np.atleast_1d(pts)
    cell, v, u = _locate(g, pts)
    out = np.zeros(pts.shape)
    inner = (pts > 0) & (u > 0)
    out[inner] = _kstar_local(h, phi, cell[inner], v[inner], u[inner])
    out[pts <= 0] = np.nan
    if points is None:
        return SampledFunction(g, out)
    return out


def kstar_on_cells(h, phi, v, u):
    """``K* phi`` at local nodes ``(v, u)`` of every cell; returns shape ``(n_steps, len(v))``."""
    n = phi.grid.n_steps
    cell = np.repeat(np.arange(n), len(v))
    vals = _kstar_local(h, phi, cell, np.tile(v, n), np.tile(u, n))
    return vals.reshape(n, len(v))


def isometry_norm(h, phi):
    """Norm ``||K* phi||_{L2(0, T)}``, the covariance norm of ``int phi dbeta_H``.

    Integrates ``(K* phi)^2`` cell by cell with a double-exponential rule so
    the algebraic singularities at the nodes are resolved.
    """
    h = check_hurst(h)
    v, u, w = tanh_sinh()
    vals = kstar_on_cells(h, phi, v, u)
    return float(np.sqrt(phi.grid.step * np.sum(vals**2 @ w)))
