"""Minimum-norm steering of the delay system by Picard iteration.

For a trajectory iterate ``x`` the control is the minimum-norm preimage under
``W u = int_0^T R(T - s) L u(s) ds`` of the gap between the target and every
other term of the mild solution at ``T``. Applying the mild-solution map
``psi`` with that control lands exactly on the target at ``T``; iterating
``psi`` converges to a trajectory that is consistent with its own control.

The control is anticipative: it consumes the stochastic convolution over the
whole horizon, so the noise path is drawn before any control is built.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, NumericalError, check_positive
from .grid import SampledFunction, TimeGrid
from .hilbert_noise import convolution_integrals, sample_qfbm
from .resolvent import gramians
from .rng import RngStream
from .system_model import (
    DelaySystemSpec,
    GateWarning,
    Trajectory,
    build_system,
    delayed_lookup,
)

DEFAULT_SEED = 20261015
NOISE_STREAM = 0
REFINE_STREAM = 1
_RATIO_FLOOR = 1e-13  # successive errors below this are roundoff, not contraction


class UncontrollableModeError(ConfigError):
    """A mode has zero Gramian, so no control reaches it."""

    def __init__(self, mode):
        super().__init__(f"mode {mode} is uncontrollable: its Gramian vanishes")
        self.mode = mode


class SteeringConvergenceError(NumericalError):
    """Picard iteration did not reach the tolerance although the gate passed."""

    def __init__(self, errors):
        super().__init__(
            f"no convergence in {len(errors)} iterations; last errors {list(errors[-3:])}"
        )
        self.errors = list(errors)


@dataclass(frozen=True)
class ControllabilityOperator:
    """Diagonal realization of ``W`` on a resolvent table.

    Attributes
    ----------
    family : ResolventFamily
    gains : ndarray, shape (N,)
    gramians : ndarray, shape (N,)
        ``gamma_n`` by the trapezoidal rule.
    M_W_measured : float
        ``max_n gamma_n^(-1/2)``, the operator norm of the minimum-norm inverse.
    """

    family: object
    gains: np.ndarray
    gramians: np.ndarray
    M_W_measured: float

    @classmethod
    def build(cls, family, gains):
        gam = gramians(family, gains)
        bad = np.nonzero(~(gam > 0))[0]
        if bad.size:
            raise UncontrollableModeError(int(bad[0]) + 1)
        return cls(family, np.asarray(gains, dtype=float), gam, float(np.max(gam**-0.5)))

    @property
    def grid(self):
        return self.family.grid

    @property
    def reversed_gains(self):
        """``l_n r_n(T - s_j)`` at the nodes."""
        return self.family.mode_values[::-1] * self.gains


@dataclass(frozen=True)
class ControlSignal:
    """Mode values ``u_n(t_j)``, linear between nodes."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def l2_norm(self):
        sq = np.sum(self.values**2, axis=1)
        return float(np.sqrt(self.grid.step * (sq.sum() - 0.5 * (sq[0] + sq[-1]))))

    def resample(self, grid):
        """Linear interpolation onto another grid over the same interval."""
        return ControlSignal(grid, SampledFunction(self.grid, self.values)(grid.nodes))

    def to_csv_rows(self):
        return np.column_stack([self.grid.nodes, self.values])


@dataclass(frozen=True)
class SteeringResult:
    """Outcome of :func:`solve_steering`.

    Attributes
    ----------
    trajectory : Trajectory
    control : ControlSignal
    picard_errors : list of float
        ``sup_t ||x^{k+1}(t) - x^k(t)||`` for ``k = 0, 1, ...``.
    measured_ratio : float
        Largest ratio of successive errors above roundoff; nan with fewer
        than two such errors.
    terminal_error : float
        ``||x(T) - x1|| / (1 + ||x1||)`` of the discrete solution.
    iterations : int
        Index of the first error below the tolerance (1 for a linear system).
    converged : bool
    target : ndarray
    noise : QfbmPath or None
    """

    trajectory: Trajectory
    control: ControlSignal
    picard_errors: list
    measured_ratio: float
    terminal_error: float
    iterations: int
    converged: bool
    target: np.ndarray
    noise: object = field(default=None, repr=False)

    def diagnostics_rows(self):
        """Rows ``(iteration, error, ratio)``; the first ratio is nan."""
        e = np.asarray(self.picard_errors)
        ratio = np.full(e.size, np.nan)
        ratio[1:] = e[1:] / np.where(e[:-1] > 0, e[:-1], np.nan)
        return np.column_stack([np.arange(e.size), e, ratio])


def _trapezoid(values, step):
    return step * (values.sum(axis=0) - 0.5 * (values[0] + values[-1]))


def apply_W(op, u):
    """``int_0^T r_n(T - s) l_n u_n(s) ds`` per mode, by the trapezoidal rule."""
    if u.grid != op.grid:
        raise ConfigError("control and resolvent grids differ")
    return _trapezoid(op.reversed_gains * u.values, op.grid.step)


def invert_W(op, z):
    """Minimum-norm control ``u_n(s) = l_n r_n(T - s) z_n / gamma_n``."""
    z = np.asarray(z, dtype=float)
    if z.shape != op.gains.shape:
        raise ConfigError(f"z must have {op.gains.size} coordinates")
    return ControlSignal(op.grid, op.reversed_gains * (z / op.gramians))


def memory_convolution(kernel_values, forcing, step):
    """Trapezoidal ``int_0^{t_j} k(t_j - s) F(s) ds`` at every node, mode by mode."""
    n = kernel_values.shape[0]
    full = fftconvolve(kernel_values, forcing, axes=0)[:n]
    return step * (full - 0.5 * (kernel_values * forcing[0] + kernel_values[0] * forcing))


def stochastic_convolution(system, noise):
    """``int_0^{t_j} R(t_j - s) sigma(s) dB^H(s)`` at every node; zeros without noise."""
    shape = system.family.mode_values.shape
    if noise is None or not system.noise_enabled:
        return np.zeros(shape)
    if noise.grid != system.grid:
        raise ConfigError("noise and system grids differ")
    return convolution_integrals(system.family.mode_values, system.sigma, system.q, noise)


def _phi0_term(system):
    """``phi(0) + g(0, phi(-r(0)))``."""
    lookup = delayed_lookup(initial_iterate(system), 0.0, system.delay_r)
    return system.history.values[-1] + system.g(0.0, lookup)


def _pieces(system, x_iter):
    """Terms of the mild solution that depend on the iterate, at every node."""
    t = system.grid.nodes
    neutral = system.g(t, delayed_lookup(x_iter, t, system.delay_r))
    drift = system.f(t, delayed_lookup(x_iter, t, system.delay_rho))
    return neutral, drift


def synthesize_control(system, op, x_iter, stochastic, x1):
    """Control that closes the gap between ``x1`` and the uncontrolled terms at ``T``.

    ``z = x1 - R(T)(phi(0) + g(0, phi(-r(0)))) + g(T, x(T - r(T)))
    - int_0^T R(T - s) f(s, x(s - rho(s))) ds - stochastic(T)``.

    The neutral term enters with a plus sign: the mild solution subtracts
    it, so this is the sign that makes ``psi(x)(T) = x1``.
    """
    neutral, drift = _pieces(system, x_iter)
    r = system.family.mode_values
    z = (
        np.asarray(x1, dtype=float)
        - r[-1] * _phi0_term(system)
        + neutral[-1]
        - _trapezoid(r[::-1] * drift, system.grid.step)
        - stochastic[-1]
    )
    return invert_W(op, z)


def apply_psi(system, x_iter, u, stochastic):
    """Mild-solution map: the right-hand side evaluated along ``x_iter`` with control ``u``.

    Returns a trajectory equal to the history on ``[-tau, 0]``.
    """
    if u.grid != system.grid:
        raise ConfigError("control and system grids differ")
    neutral, drift = _pieces(system, x_iter)
    r = system.family.mode_values
    forcing = system.gains * u.values + drift
    vals = r * _phi0_term(system) - neutral + memory_convolution(r, forcing, system.grid.step) + stochastic
    vals[0] = system.history.values[-1]
    return Trajectory(system.history, SampledFunction(system.grid, vals))


def initial_iterate(system):
    """``R(t) phi(0)`` on ``[0, T]`` after the history."""
    vals = system.family.mode_values * system.history.values[-1]
    return Trajectory(system.history, SampledFunction(system.grid, vals))


def _change(a, b):
    return float(np.max(np.linalg.norm(a.forward.values - b.forward.values, axis=1)))


def _ratio(errors):
    e = np.asarray(errors)
    keep = e[:-1] > _RATIO_FLOOR
    if not np.any(keep):
        return float("nan")
    return float(np.max(e[1:][keep] / e[:-1][keep]))


def sample_noise(system, seed):
    """One Q-fBm path on the system grid from ``(seed, NOISE_STREAM)``; None without noise."""
    if not system.noise_enabled:
        return None
    return sample_qfbm(system.q, system.hurst, system.grid, RngStream(seed, NOISE_STREAM))


def solve_steering(system, x1=None, seed=DEFAULT_SEED, tol=None, max_iter=None, noise=None):
    """Steer ``system`` to ``x1`` at ``T`` along one noise path.

    Parameters
    ----------
    system : DelaySystem
    x1 : array_like, optional
        Target; defaults to ``system.target``.
    seed : int
        Seeds the noise path unless ``noise`` is given.
    tol, max_iter : optional
        Default to the values in the system spec.
    noise : QfbmPath, optional
        Pre-drawn noise on the system grid.

    Returns
    -------
    SteeringResult

    Raises
    ------
    SteeringConvergenceError
        If the gate passes but the tolerance is not reached.
    """
    x1 = system.target if x1 is None else np.asarray(x1, dtype=float)
    if x1.shape != (system.modes,):
        raise ConfigError(f"target must have {system.modes} coordinates")
    tol = check_positive(system.spec.tol if tol is None else tol, "tol")
    max_iter = check_positive(system.spec.max_iter if max_iter is None else max_iter, "max_iter", integer=True)
    if not system.gate.passes:
        warnings.warn(
            f"contraction condition {system.gate.condition_value:.4g} fails; steering carries no guarantee",
            GateWarning,
            stacklevel=2,
        )
    if noise is None:
        noise = sample_noise(system, seed)
    op = ControllabilityOperator.build(system.family, system.gains)
    stoch = stochastic_convolution(system, noise)
    x = initial_iterate(system)
    errors = []
    converged = False
    for _ in range(max_iter):
        u = synthesize_control(system, op, x, stoch, x1)
        nxt = apply_psi(system, x, u, stoch)
        errors.append(_change(nxt, x))
        x = nxt
        if errors[-1] < tol:
            converged = True
            break
    if not converged and system.gate.passes:
        raise SteeringConvergenceError(errors)
    # one more control so that the returned pair is consistent
    u = synthesize_control(system, op, x, stoch, x1)
    term = float(np.linalg.norm(x.forward.values[-1] - x1) / (1.0 + np.linalg.norm(x1)))
    iterations = len(errors) - 1 if converged else len(errors)
    return SteeringResult(x, u, errors, _ratio(errors), term, iterations, converged, x1, noise)


def refine_noise(noise, seed, n_steps):
    """Refine ``noise`` by repeated halving until it has ``n_steps`` cells.

    The halving that produces a grid of ``m`` cells draws from the
    sub-stream ``(seed, (REFINE_STREAM, m))``. Keying by the fine size
    rather than the number of halvings means refining a path to 256 and
    then to 1024 gives the same 1024-cell path as refining it directly.
    """
    while noise.grid.n_steps < n_steps:
        noise = noise.refine(RngStream(seed, (REFINE_STREAM, 2 * noise.grid.n_steps)))
    if noise.grid.n_steps != n_steps:
        raise ConfigError(f"{n_steps} is not a power-of-two multiple of the noise grid")
    return noise


def simulate(system, control, noise, tol=1e-12, max_iter=100):
    """Mild solution for a fixed control, by fixed-point iteration in the neutral and delay terms."""
    stoch = stochastic_convolution(system, noise)
    x = initial_iterate(system)
    for _ in range(max_iter):
        nxt = apply_psi(system, x, control, stoch)
        done = _change(nxt, x) < tol
        x = nxt
        if done:
            return x
    raise NumericalError("fixed-control simulation did not converge")


def verified_terminal_error(system, result, reference_steps, seed=DEFAULT_SEED):
    """Terminal error of the computed control on a finer grid.

    The control is interpolated onto ``reference_steps`` cells, the noise
    path is refined to the same grid (same underlying Brownian motions) and
    the mild solution is recomputed with the control held fixed. Unlike
    :attr:`SteeringResult.terminal_error`, which is exact by construction,
    this measures how well the control steers the continuous-time system.
    """
    fine = system.with_steps(reference_steps)
    noise = None
    if system.noise_enabled:
        noise = refine_noise(result.noise, seed, reference_steps)
    x = simulate(fine, result.control.resample(fine.grid), noise)
    x1 = result.target
    return float(np.linalg.norm(x.forward.values[-1] - x1) / (1.0 + np.linalg.norm(x1)))


class SteeringController(BaseEstimator):
    """Estimator-style wrapper around :func:`solve_steering`.

    Parameters
    ----------
    spec : DelaySystemSpec, optional
        Defaults to a system spec with every field at its default.
    seed : int
    tol, max_iter : optional
        Override the values in the system spec.

    Attributes
    ----------
    system_ : DelaySystem
    operator_ : ControllabilityOperator
    result_ : SteeringResult
    """

    def __init__(self, spec=None, seed=DEFAULT_SEED, tol=None, max_iter=None):
        self.spec = spec
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X=None, y=None):
        """Steer to ``y`` (or the target in the system spec)."""
        spec = DelaySystemSpec() if self.spec is None else self.spec
        self.system_ = build_system(spec)
        self.operator_ = ControllabilityOperator.build(self.system_.family, self.system_.gains)
        self.result_ = solve_steering(self.system_, y, self.seed, self.tol, self.max_iter)
        return self

    def control(self):
        check_is_fitted(self, "result_")
        return self.result_.control

    def score(self, X=None, y=None):
        """Negative discrete terminal error."""
        check_is_fitted(self, "result_")
        return -self.result_.terminal_error
