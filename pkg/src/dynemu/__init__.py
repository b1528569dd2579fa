"""Mechanistic dynamic emulation of ODE simulation models.

A linearized stochastic surrogate of the model is run as coupled replicas,
conditioned on precomputed simulation runs, and evaluated for a new input
with a recursion whose cost is linear in the number of time points and in
the number of design runs.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateEigenvalues,
    EmulatorError,
    MismatchedGrids,
    NonDiagonalizable,
    NonFinite,
    NotPositiveDefinite,
)
from .kernels import EigenDecomp, eigendecompose, phi1, propagator_h, drift_k, noise_block_g, sigma_const  # noqa: E402
from .coupling import DesignSet, InputTrajectory, MetricSpec, coupling_matrix, coupling_weight, rho  # noqa: E402
from .covariance import TimeGrid, assemble_replica_kernels, mean_recursion, sigma_prime  # noqa: E402
from .simulator import AffineModel, SimulationModel, integrate_ode, sample_linear_sde  # noqa: E402
from .conditioner import ConditionConfig, ConditionedEmulator, ObservationSet, condition, load, save  # noqa: E402
from .emulator import EmulationResult, d_value, dense_oracle, emulate, emulate_mean, emulate_variance  # noqa: E402
from . import logspm  # noqa: E402,F401

__all__ = [
    "ConfigError", "DegenerateEigenvalues", "EmulatorError", "MismatchedGrids", "NonDiagonalizable", "NonFinite",
    "NotPositiveDefinite",
    "EigenDecomp", "eigendecompose", "phi1", "propagator_h", "drift_k", "noise_block_g", "sigma_const",
    "DesignSet", "InputTrajectory", "MetricSpec", "coupling_matrix", "coupling_weight", "rho",
    "TimeGrid", "assemble_replica_kernels", "mean_recursion", "sigma_prime",
    "AffineModel", "SimulationModel", "integrate_ode", "sample_linear_sde",
    "ConditionConfig", "ConditionedEmulator", "ObservationSet", "condition", "load", "save",
    "EmulationResult", "d_value", "dense_oracle", "emulate", "emulate_mean", "emulate_variance",
    "logspm",
]
