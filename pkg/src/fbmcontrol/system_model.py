"""Neutral stochastic delay system with memory, in sine-mode coordinates.

The state lives in the span of ``e_n(xi) = sqrt(2/pi) sin(n xi)`` on
``(0, pi)``, ``n = 1..N``. The system is

    d[x(t) + g(t, x(t - r(t)))] = [A x(t) + int_0^t B(t - s) x(s) ds
                                   + L u(t) + f(t, x(t - rho(t)))] dt + sigma(t) dB^H(t)

with ``A e_n = -n^2 e_n``, ``B(t) = b(t) A``, a diagonal control operator
``L`` and history ``x = phi`` on ``[-tau, 0]``.

A :class:`DelaySystemSpec` is the strict JSON document describing such a
system; :func:`build_system` validates it and returns the realized
:class:`DelaySystem`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.fft import dst

from ._validation import ConfigError, check_positive
from .grid import SampledFunction, TimeGrid
from .hilbert_noise import CovarianceSpec, DiagonalNoiseCoefficient
from .resolvent import MemoryKernel, gramians, solve_modes
from .rng import RngStream

GATE_THRESHOLD = 0.25
AUDIT_PAIRS = 1000
_SNAP = 1e-9  # relative in-cell position treated as a node hit
_AUDIT_SLACK = 1e-12

_HISTORY_STREAM = 7
_AUDIT_STREAM = 11


class GateWarning(UserWarning):
    """The contraction condition fails, so convergence of steering is not guaranteed."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)


class DelayModel(_Strict):
    """``r(t) = value + amplitude * sin(2 pi frequency t)``; ``constant`` ignores the last two."""

    kind: Literal["constant", "sinusoidal"] = "constant"
    value: float = 0.2
    amplitude: float = 0.0
    frequency: float = 1.0


class NonlinearityModel(_Strict):
    """Pointwise shape ``gain * shape(xi)`` with declared Lipschitz and growth constants.

    ``lipschitz`` and ``growth`` default to ``|gain|`` and ``gain**2``, which
    are sharp for every available shape.
    """

    shape: Literal["zero", "sin", "tanh", "linear"] = "zero"
    gain: float = 0.0
    lipschitz: float | None = None
    growth: float | None = None


class MemoryModel(_Strict):
    amplitude: float = 0.5
    rate: float = 1.0


class NoiseModel(_Strict):
    """Diagonal noise ``s_n(t) = level * n^-decay * (1 + modulation * sin(2 pi t))``."""

    enabled: bool = True
    level: float = 0.1
    decay: float = 2.0
    modulation: float = 0.5
    holder_exponent: float = 1.0


class HistoryModel(_Strict):
    """History ``phi_n(theta) = amplitude * n^-2 * (1 + z_n) * exp(theta)``.

    ``z_n = 0`` for ``smooth``; for ``random`` the ``z_n`` are standard
    normals from ``seed``.
    """

    kind: Literal["smooth", "random"] = "smooth"
    amplitude: float = 1.0
    seed: int = Field(default=0, ge=0)


class DelaySystemSpec(_Strict):
    """Strict JSON description of a controlled delay system.

    Unset ``eigenvalues`` default to ``n^-2``, unset ``control_gains`` to 1
    and an unset ``target`` to the first basis vector.
    """

    modes: int = Field(default=16, ge=1)
    horizon: float = Field(default=1.0, gt=0)
    n_steps: int = Field(default=512, ge=2)
    hurst: float = Field(default=0.25, gt=0, lt=0.5)
    max_delay: float = Field(default=0.2, gt=0)
    delay_r: DelayModel = DelayModel()
    delay_rho: DelayModel = DelayModel()
    f: NonlinearityModel = NonlinearityModel()
    g: NonlinearityModel = NonlinearityModel()
    nonlinearity_action: Literal["pointwise", "coordinatewise"] = "pointwise"
    memory: MemoryModel = MemoryModel()
    eigenvalues: list[float] | None = None
    noise: NoiseModel = NoiseModel()
    control_gains: list[float] | None = None
    history: HistoryModel = HistoryModel()
    target: list[float] | None = None
    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=50, ge=1)


def load_spec(path):
    """Read and validate a JSON spec file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_spec(text)


def parse_spec(text):
    try:
        return DelaySystemSpec.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"invalid system spec: {exc}") from exc


def save_spec(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(spec.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Delay:
    """Closed-form delay function with exact range bounds."""

    kind: str
    value: float
    amplitude: float = 0.0
    frequency: float = 1.0

    @classmethod
    def from_model(cls, model):
        return cls(model.kind, model.value, model.amplitude, model.frequency)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full(t.shape, self.value)
        return self.value + self.amplitude * np.sin(2 * np.pi * self.frequency * t)

    def bounds(self):
        """Range of the delay over all times."""
        if self.kind == "constant":
            return self.value, self.value
        a = abs(self.amplitude)
        return self.value - a, self.value + a


_SHAPES = {
    "zero": lambda z: np.zeros_like(z),
    "sin": np.sin,
    "tanh": np.tanh,
    "linear": lambda z: z,
}


def _collocation_size(modes):
    """``M`` with ``M + 1`` the smallest power of two >= 4N."""
    return 2 ** math.ceil(math.log2(max(4 * modes, 2))) - 1


def to_physical(x):
    """Values of ``sum_n x_n e_n`` at ``xi_k = k pi / (M + 1)``, ``k = 1..M``."""
    x = np.asarray(x, dtype=float)
    m = _collocation_size(x.shape[-1])
    pad = np.zeros(x.shape[:-1] + (m,))
    pad[..., : x.shape[-1]] = x
    return np.sqrt((m + 1) / np.pi) * dst(pad, type=1, norm="ortho", axis=-1)


def to_modes(values, modes):
    """Sine coefficients ``1..modes`` of collocation values (inverse of :func:`to_physical`)."""
    m = values.shape[-1]
    return np.sqrt(np.pi / (m + 1)) * dst(values, type=1, norm="ortho", axis=-1)[..., :modes]


@dataclass(frozen=True)
class Nemytskii:
    """Superposition operator ``x -> P_N (gain * shape(x(xi)))`` in mode coordinates.

    With ``action="pointwise"`` the shape acts on the function values at
    collocation points; the discrete transform is orthogonal up to scale, so
    the Lipschitz constant of the scalar shape carries over unchanged. With
    ``"coordinatewise"`` it acts on each coordinate directly.
    """

    shape: str
    gain: float
    lipschitz: float
    growth: float
    action: str = "pointwise"

    @classmethod
    def from_model(cls, model, action):
        lip = abs(model.gain) if model.lipschitz is None else model.lipschitz
        growth = model.gain**2 if model.growth is None else model.growth
        if model.shape == "zero":
            lip = 0.0 if model.lipschitz is None else lip
        check_positive(lip, "lipschitz", allow_zero=True)
        check_positive(growth, "growth", allow_zero=True)
        return cls(model.shape, model.gain, lip, growth, action)

    @property
    def is_zero(self):
        return self.shape == "zero" or self.gain == 0.0

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros_like(x)
        shape = _SHAPES[self.shape]
        if self.action == "coordinatewise":
            return self.gain * shape(x)
        return self.gain * to_modes(shape(to_physical(x)), x.shape[-1])

    def audit(self, modes, horizon, rng, pairs=AUDIT_PAIRS):
        """Largest Lipschitz and growth quotients on random pairs.

        Returns
        -------
        dict
            ``lipschitz`` (max ``||f(x) - f(y)|| / ||x - y||``) and ``growth``
            (max ``||f(x)||^2 / (1 + ||x||^2)``).
        """
        gen = rng.generator()
        scale = 10.0 ** gen.uniform(-2, 1, size=(pairs, 1))
        x = scale * gen.standard_normal((pairs, modes))
        y = x + scale * 10.0 ** gen.uniform(-3, 0, size=(pairs, 1)) * gen.standard_normal((pairs, modes))
        t = gen.uniform(0, horizon, size=pairs)
        fx, fy = self(t, x), self(t, y)
        lip = np.linalg.norm(fx - fy, axis=1) / np.linalg.norm(x - y, axis=1)
        grow = np.sum(fx**2, axis=1) / (1.0 + np.sum(x**2, axis=1))
        return {"lipschitz": float(lip.max()), "growth": float(grow.max())}


@dataclass(frozen=True)
class Trajectory:
    """State on ``[-tau, T]``: the history piece and the forward piece.

    Attributes
    ----------
    history : SampledFunction
        Vector values on ``[-tau, 0]``.
    forward : SampledFunction
        Vector values on ``[0, T]``; ``forward.values[0]`` equals
        ``history.values[-1]``.
    """

    history: SampledFunction
    forward: SampledFunction

    @property
    def nodes(self):
        return np.concatenate([self.history.grid.nodes, self.forward.grid.nodes[1:]])

    @property
    def values(self):
        return np.concatenate([self.history.values, self.forward.values[1:]])

    def at(self, times):
        """Linear interpolation at ``times`` in ``[-tau, T]``; node hits are exact."""
        return _interpolate(self.nodes, self.values, np.asarray(times, dtype=float))

    def to_csv_rows(self):
        return np.column_stack([self.nodes, self.values])


def _interpolate(nodes, values, times):
    lo_end, hi_end = nodes[0], nodes[-1]
    tol = 1e-12 * max(1.0, abs(lo_end), abs(hi_end))
    if np.any(times < lo_end - tol) or np.any(times > hi_end + tol):
        raise ConfigError(f"lookup outside [{lo_end}, {hi_end}]")
    idx = np.clip(np.searchsorted(nodes, times, side="right") - 1, 0, nodes.size - 2)
    w = (times - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    w = np.where(np.abs(w) < _SNAP, 0.0, np.where(np.abs(1.0 - w) < _SNAP, 1.0, w))
    w = np.clip(w, 0.0, 1.0)[..., None]
    return (1.0 - w) * values[idx] + w * values[idx + 1]


def delayed_lookup(trajectory, t, delay):
    """State at ``t - delay(t)`` for ``t`` in ``[0, T]``.

    Negative arguments read the history; off-node arguments are linearly
    interpolated.
    """
    t = np.asarray(t, dtype=float)
    g = trajectory.forward.grid
    if np.any(t < 0) or np.any(t > g.end * (1 + 1e-12)):
        raise ConfigError(f"lookup time must lie in [0, {g.end}]")
    arg = t - delay(t)
    tau_start = trajectory.history.grid.start
    assert np.all(arg >= tau_start - 1e-12 * max(1.0, abs(tau_start))), "delay exceeds the history length"
    return trajectory.at(arg)


@dataclass(frozen=True)
class TheoremGateReport:
    """Contraction condition for the Picard map of the steering problem.

    ``condition_value = C3^2 + D^2 C1^2 T^2 + D^2 M_L^2 M_W^2 C3^2 T
    + D^4 M_L^2 M_W^2 C1^2 T^3`` and ``K = 4 condition_value``; steering is
    guaranteed when ``condition_value < 1/4``.
    """

    D: float
    M_L: float
    M_W: float
    K: float
    condition_value: float
    passes: bool


def contraction_constant(C1, C3, D, M_L, M_W, T):
    """Evaluate the contraction condition; all inputs must be non-negative."""
    for name, val in (("C1", C1), ("C3", C3), ("D", D), ("M_L", M_L), ("M_W", M_W), ("T", T)):
        check_positive(val, name, allow_zero=True)
    dw = D**2 * M_L**2 * M_W**2
    cond = C3**2 + D**2 * C1**2 * T**2 + dw * C3**2 * T + D**2 * dw * C1**2 * T**3
    return TheoremGateReport(
        float(D), float(M_L), float(M_W), 4.0 * cond, cond, bool(cond < GATE_THRESHOLD)
    )


@dataclass(frozen=True)
class DelaySystem:
    """Validated, realized system.

    Attributes
    ----------
    spec : DelaySystemSpec
    grid : TimeGrid
        Forward grid on ``[0, T]``.
    history : SampledFunction
        ``phi`` on ``[-tau, 0]``; its step divides ``tau / 2``.
    q : CovarianceSpec
    sigma : DiagonalNoiseCoefficient
    kernel : MemoryKernel
    gains : ndarray
        Diagonal entries ``l_n`` of the control operator.
    f, g : Nemytskii
    delay_r, delay_rho : Delay
    target : ndarray
    family : ResolventFamily
    gate : TheoremGateReport
    noise_report : dict
        Hölder ratio and the ``int sum lambda_n n^4 s_n^2`` summability figure.
    """

    spec: DelaySystemSpec
    grid: TimeGrid
    history: SampledFunction
    q: CovarianceSpec
    sigma: DiagonalNoiseCoefficient
    kernel: MemoryKernel
    gains: np.ndarray
    f: Nemytskii
    g: Nemytskii
    delay_r: Delay
    delay_rho: Delay
    target: np.ndarray
    family: object
    gate: TheoremGateReport
    noise_report: dict

    @property
    def modes(self):
        return self.spec.modes

    @property
    def hurst(self):
        return self.spec.hurst

    @property
    def noise_enabled(self):
        return self.spec.noise.enabled and self.spec.noise.level != 0.0

    def with_steps(self, n_steps):
        """Same system on a different forward grid."""
        return build_system(self.spec.model_copy(update={"n_steps": int(n_steps)}))


def history_grid(max_delay, step):
    """Grid on ``[-tau, 0]`` with ``2 ceil(tau / (2 step))`` cells, so ``-tau/2`` is a node."""
    cells = 2 * math.ceil(max_delay / (2 * step) - 1e-9)
    return TimeGrid(max_delay, max(cells, 2), start=-max_delay)


def _history(spec, grid):
    hg = history_grid(spec.max_delay, grid.step)
    n = np.arange(1, spec.modes + 1, dtype=float)
    z = np.zeros(spec.modes)
    if spec.history.kind == "random":
        z = RngStream(spec.history.seed, _HISTORY_STREAM).normal(spec.modes)
    amp = spec.history.amplitude * n**-2.0 * (1.0 + z)
    return SampledFunction(hg, np.exp(hg.nodes)[:, None] * amp[None, :])


def _vector(values, modes, name, default):
    if values is None:
        return default
    arr = np.asarray(values, dtype=float)
    if arr.shape != (modes,):
        raise ConfigError(f"{name} must list {modes} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return arr


def _check_delay(delay, spec, label):
    lo, hi = delay.bounds()
    if lo < 0 or hi > spec.max_delay:
        raise ConfigError(f"{label} ranges over [{lo}, {hi}], outside [0, {spec.max_delay}]")
    dense = delay(np.linspace(0.0, spec.horizon, 4097))
    assert dense.min() >= 0 and dense.max() <= spec.max_delay


def _audit(op, label, modes, horizon, stream):
    found = op.audit(modes, horizon, RngStream(0, (_AUDIT_STREAM, stream)))
    if found["lipschitz"] > op.lipschitz * (1 + _AUDIT_SLACK) + _AUDIT_SLACK:
        raise ConfigError(
            f"{label}: declared Lipschitz constant {op.lipschitz} is below the audited {found['lipschitz']:.6g}"
        )
    if found["growth"] > op.growth * (1 + _AUDIT_SLACK) + _AUDIT_SLACK:
        raise ConfigError(
            f"{label}: declared growth constant {op.growth} is below the audited {found['growth']:.6g}"
        )
    return found


def build_system(spec):
    """Validate ``spec`` and realize every component.

    Raises
    ------
    ConfigError
        For delays leaving ``[0, tau]``, Lipschitz or growth constants that
        fail the random-pair audit, noise regularity violations and
        malformed vectors.

    Warns
    -----
    GateWarning
        If the contraction condition fails. The system is still returned so
        the failure can be demonstrated.
    """
    if not isinstance(spec, DelaySystemSpec):
        raise ConfigError("build_system expects a DelaySystemSpec")
    n = spec.modes
    grid = TimeGrid(spec.horizon, spec.n_steps)
    delay_r, delay_rho = Delay.from_model(spec.delay_r), Delay.from_model(spec.delay_rho)
    _check_delay(delay_r, spec, "delay_r")
    _check_delay(delay_rho, spec, "delay_rho")
    f = Nemytskii.from_model(spec.f, spec.nonlinearity_action)
    g = Nemytskii.from_model(spec.g, spec.nonlinearity_action)
    _audit(f, "f", n, spec.horizon, 0)
    _audit(g, "g", n, spec.horizon, 1)
    idx = np.arange(1, n + 1, dtype=float)
    q = CovarianceSpec(_vector(spec.eigenvalues, n, "eigenvalues", idx**-2.0))
    level = spec.noise.level if spec.noise.enabled else 0.0
    sigma = DiagonalNoiseCoefficient.modulated(grid, q, level, spec.noise.decay, spec.noise.modulation)
    if spec.noise.holder_exponent != 1.0:
        sigma = DiagonalNoiseCoefficient(sigma.mode_functions, sigma.holder_constant, spec.noise.holder_exponent)
    noise_report = sigma.validate(spec.hurst, q)
    kernel = MemoryKernel(spec.memory.amplitude, spec.memory.rate)
    gains = _vector(spec.control_gains, n, "control_gains", np.ones(n))
    target = _vector(spec.target, n, "target", np.eye(n)[0])
    family = solve_modes(kernel, n, grid)
    gam = gramians(family, gains)
    m_w = float(np.max(gam**-0.5)) if np.all(gam > 0) else math.inf
    gate = contraction_constant(
        f.lipschitz, g.lipschitz, family.sup_norm, float(np.max(np.abs(gains))), m_w, spec.horizon
    )
    if not gate.passes:
        warnings.warn(
            f"contraction condition {gate.condition_value:.4g} >= {GATE_THRESHOLD}: "
            "steering convergence is not guaranteed",
            GateWarning,
            stacklevel=2,
        )
    return DelaySystem(
        spec, grid, _history(spec, grid), q, sigma, kernel, gains, f, g,
        delay_r, delay_rho, target, family, gate, noise_report,
    )


def heat_memory_example(
    modes=16,
    hurst=0.25,
    n_steps=512,
    horizon=1.0,
    shape="sin",
    f_gain=0.05,
    g_gain=0.05,
    memory_amplitude=0.5,
    memory_rate=1.0,
    tau_g=0.2,
    tau_f=0.2,
    noise_level=0.1,
    target=None,
):
    """Heat equation with memory on ``(0, pi)`` with constant delays.

    ``g`` is delayed by ``tau_g`` and ``f`` by ``tau_f``; both act pointwise
    through ``gain * shape``. Eigenvalues are ``n^-2``, the control acts on
    every mode with unit gain and the default target is ``e_1``.
    """
    tau = max(tau_g, tau_f)
    return DelaySystemSpec(
        modes=modes,
        horizon=horizon,
        n_steps=n_steps,
        hurst=hurst,
        max_delay=tau,
        delay_r=DelayModel(value=tau_g),
        delay_rho=DelayModel(value=tau_f),
        f=NonlinearityModel(shape=shape if f_gain else "zero", gain=f_gain),
        g=NonlinearityModel(shape=shape if g_gain else "zero", gain=g_gain),
        memory=MemoryModel(amplitude=memory_amplitude, rate=memory_rate),
        noise=NoiseModel(enabled=noise_level != 0, level=noise_level),
        target=None if target is None else [float(v) for v in target],
    )


def gate_passing_example(modes=4, condition=0.04, n_steps=512, **kwargs):
    """Heat-memory system whose nonlinearity gains make the condition equal ``condition``.

    ``f`` and ``g`` share one gain ``c``; the condition is quadratic in
    ``c``, so the gain follows in closed form from the measured ``D``, ``M_L``
    and ``M_W``.
    """
    probe = heat_memory_example(modes=modes, n_steps=n_steps, f_gain=0.0, g_gain=0.0, **kwargs)
    unit = build_system(probe).gate
    scale = contraction_constant(1.0, 1.0, unit.D, unit.M_L, unit.M_W, probe.horizon).condition_value
    c = math.sqrt(condition / scale)
    return heat_memory_example(modes=modes, n_steps=n_steps, f_gain=c, g_gain=c, **kwargs)
