"""Stabilized Runge-Kutta sampling toolkit.

Fixed-grid ODE solvers for flow-matching and noise-based generative sampling,
built on stabilized Runge-Kutta methods with Taylor-expanded virtual stage
evaluations, plus analysis machinery (stability regions, stability extents,
empirical convergence orders) and analytic oracle problems.
"""

from .errors import ConfigurationError
from .coefficients import (
    ConsistencyReport,
    Rkg2Coefficients,
    Rock4Coefficients,
    rkg2_coeffs,
    rkg2_stability_poly,
    rock4_coeffs,
    supported_rock4_degrees,
    table_checksum,
    validate_consistency,
)
from .fields import (
    AnalyticProblem,
    GuidedField,
    SemiLinearNoiseModel,
    VelocityField,
    cfg_combine,
    guided_noise_model,
    make_gaussian_flow,
    make_gaussian_vp,
    make_linear_system,
    make_stiff_scalar,
    reference_solve,
    time_reversed,
)
from .stepper import (
    DerivativeCache,
    FlowWalk,
    SolveReport,
    SolverConfig,
    TimeGrid,
    baseline_step,
    solve_flow,
    solve_noise,
    stork2_superstep,
    stork4_superstep,
    taylor_eval,
    tweedie_finish,
)

__version__ = "1.0.0"

__all__ = [
    "AnalyticProblem",
    "ConfigurationError",
    "ConsistencyReport",
    "DerivativeCache",
    "FlowWalk",
    "GuidedField",
    "Rkg2Coefficients",
    "Rock4Coefficients",
    "SemiLinearNoiseModel",
    "SolveReport",
    "SolverConfig",
    "TimeGrid",
    "VelocityField",
    "baseline_step",
    "cfg_combine",
    "guided_noise_model",
    "make_gaussian_flow",
    "make_gaussian_vp",
    "make_linear_system",
    "make_stiff_scalar",
    "reference_solve",
    "rkg2_coeffs",
    "rkg2_stability_poly",
    "rock4_coeffs",
    "solve_flow",
    "solve_noise",
    "stork2_superstep",
    "stork4_superstep",
    "supported_rock4_degrees",
    "table_checksum",
    "taylor_eval",
    "time_reversed",
    "tweedie_finish",
    "validate_consistency",
    "__version__",
]
