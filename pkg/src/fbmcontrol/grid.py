"""Uniform time grids and functions sampled on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigError, check_positive


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``start + j * step`` for ``j = 0, ..., n_steps``.

    Parameters
    ----------
    horizon : float
        Length of the covered interval.
    n_steps : int
        Number of cells.
    start : float, default 0.0
        Left endpoint. History grids use ``start = -tau``.
    """

    horizon: float
    n_steps: int
    start: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "horizon", check_positive(self.horizon, "horizon"))
        object.__setattr__(self, "n_steps", check_positive(self.n_steps, "n_steps", integer=True))
        if not np.isfinite(self.start):
            raise ConfigError(f"start must be finite, got {self.start}")
        object.__setattr__(self, "start", float(self.start))

    @property
    def step(self):
        return self.horizon / self.n_steps

    @property
    def end(self):
        return self.start + self.horizon

    @property
    def nodes(self):
        # index-based so nodes are exact multiples of the step
        return self.start + self.step * np.arange(self.n_steps + 1)

    def refine(self, factor=2):
        """Grid over the same interval with ``factor`` times as many cells."""
        factor = check_positive(factor, "factor", integer=True)
        return TimeGrid(self.horizon, self.n_steps * factor, self.start)


@dataclass(frozen=True)
class SampledFunction:
    """Nodal values of a scalar or vector function on a :class:`TimeGrid`.

    Parameters
    ----------
    grid : TimeGrid
    values : ndarray, shape (n_steps + 1,) or (n_steps + 1, N)
    kind : {"linear", "step"}
        ``"linear"`` interpolates linearly between nodes. ``"step"`` holds
        ``values[j]`` on ``[t_j, t_{j+1})``; the last value is only used at
        the right endpoint.
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str = field(default="linear")

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim not in (1, 2) or vals.shape[0] != self.grid.n_steps + 1:
            raise ConfigError(
                f"values must have leading length {self.grid.n_steps + 1}, got shape {vals.shape}"
            )
        if self.kind not in ("linear", "step"):
            raise ConfigError(f"kind must be 'linear' or 'step', got {self.kind!r}")
        object.__setattr__(self, "values", vals)

    def __call__(self, t):
        """Evaluate at arbitrary times inside the grid interval."""
        t = np.asarray(t, dtype=float)
        g = self.grid
        tol = 1e-12 * max(1.0, abs(g.start), abs(g.end))
        if np.any(t < g.start - tol) or np.any(t > g.end + tol):
            raise ConfigError(f"evaluation point outside [{g.start}, {g.end}]")
        pos = np.clip((t - g.start) / g.step, 0.0, g.n_steps)
        if self.kind == "step":
            idx = np.minimum(np.floor(pos + 1e-9).astype(int), g.n_steps)
            return self.values[idx]
        lo = np.minimum(np.floor(pos).astype(int), g.n_steps - 1)
        w = pos - lo
        if self.values.ndim == 2:
            w = w[..., None]
        return (1.0 - w) * self.values[lo] + w * self.values[lo + 1]
