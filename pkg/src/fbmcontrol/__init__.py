"""Controllability of neutral stochastic delay systems driven by fractional noise."""

from ._validation import ConfigError, NumericalError
from .control_solver import (
    ControllabilityOperator,
    ControlSignal,
    SteeringController,
    SteeringResult,
    apply_W,
    apply_psi,
    invert_W,
    solve_steering,
    synthesize_control,
    verified_terminal_error,
)
from .fbm_kernel import (
    covariance,
    integrated_kernel,
    isometry_norm,
    kernel,
    kernel_dt,
    kstar_transform,
    normalization_constant,
)
from .fbm_sampler import (
    FbmPath,
    FbmSampler,
    empirical_covariance,
    sample_fbm_cholesky,
    sample_fbm_volterra,
    wiener_integral_scalar,
)
from .grid import SampledFunction, TimeGrid
from .hilbert_noise import (
    CovarianceSpec,
    DiagonalNoiseCoefficient,
    QfbmPath,
    sample_qfbm,
    wiener_integral_operator,
)
from .resolvent import MemoryKernel, ResolventFamily, lipschitz_constant, solve_modes, verify_resolvent_identity
from .rng import RngStream
from .system_model import (
    DelaySystem,
    DelaySystemSpec,
    TheoremGateReport,
    build_system,
    contraction_constant,
    delayed_lookup,
    heat_memory_example,
)

__all__ = [name for name in dir() if not name.startswith("_")]
