"""Fixed quadrature rules on the unit interval.

Rules return ``(v, u, w)`` with nodes ``v``, complements ``u = 1 - v`` and
weights ``w``. Complements are computed directly rather than as ``1 - v`` so
that integrands with endpoint singularities in ``u`` stay accurate.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss


@lru_cache(maxsize=None)
def tanh_sinh(step=0.125, t_max=4.5):
    """Double-exponential rule on ``[0, 1]``.

    Handles integrable algebraic singularities at both endpoints. With the
    defaults the truncated tails are below ``exp(-140)`` in ``v`` and ``u``,
    which keeps ``u**(2h - 1)`` integrands accurate down to ``h`` near 0.05.

    Parameters
    ----------
    step : float
        Spacing in the transformed variable.
    t_max : float
        Truncation of the transformed variable.

    Returns
    -------
    v, u, w : ndarray
        Nodes, complements and weights (read-only).
    """
    t = np.arange(-t_max, t_max + 0.5 * step, step)
    z = np.pi * np.sinh(t)
    v = 1.0 / (1.0 + np.exp(-z))
    u = 1.0 / (1.0 + np.exp(z))
    w = step * np.pi * np.cosh(t) * v * u
    for arr in (v, u, w):
        arr.setflags(write=False)
    return v, u, w


@lru_cache(maxsize=None)
def gauss_legendre(order):
    """Gauss-Legendre rule of the given order mapped to ``[0, 1]``."""
    x, w = leggauss(order)
    v = 0.5 * (1.0 + x)
    u = 0.5 * (1.0 - x)
    w = 0.5 * w
    for arr in (v, u, w):
        arr.setflags(write=False)
    return v, u, w
