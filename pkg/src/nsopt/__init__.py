"""Perturbation-averaged gradient optimization toolkit.

The optimizer family here replaces the gradient with a symmetric two-point
average over k random perturbation pairs per step,

    G_i = (1/2k) sum_j [ g(W_i + U_j) + g(W_i - U_j) ],    U_j ~ P,

which follows the smoothed objective F(W) = E[f(W + U)] and trades a little
bias for a Hessian-trace (flatness) penalty.  The package ships:

- ``core``: counter-based deterministic RNG streams and perturbation laws;
- ``objectives``: benchmark problems, including the matrix-sensing simulation
  and the piecewise-quadratic chains whose flat branches pin the gradient
  norm from below;
- ``oracles``: counting gradient oracles with pluggable noise models and the
  two-point estimate itself;
- ``optimizers``: the perturbation-averaged descent loop (plus momentum),
  one-sided weight-perturbed SGD, and plain SGD, with trajectory capture;
- ``analysis``: smoothed-value/gradient estimators, estimator error moments,
  the certified rate calculators (``theorem1_rhs``, ``theorem2_rhs``,
  ``optimal_eta``, ``convex_bound``), and momentum closed forms;
- ``experiments`` / ``cli``: deterministic experiment drivers with TOML
  configs, CSV/JSON reports, and pass/fail verdicts.
"""

from .analysis import (
    BoundInputs,
    TaylorReport,
    TaylorRow,
    convex_bound,
    delta_xi_moments,
    exact_trace,
    grad_F,
    hutchinson_trace,
    momentum_grad_norm_series,
    momentum_power_iterates,
    optimal_eta,
    power_lambda1,
    sensing_trace_deviation,
    sensing_trace_formula,
    taylor_gap,
    theorem1_rhs,
    theorem2_rhs,
    value_F,
)
from .config import (
    CONFIG_TYPES,
    ConfigError,
    ConvexRateConfig,
    LowerBoundConfig,
    MomentumConfig,
    RateSweepConfig,
    SensingConfig,
    TaylorConfig,
    load_config,
)
from .core import PerturbationDist, RngStream, derive_stream
from .experiments import EXPERIMENTS, RunReport
from .objectives import (
    Objective,
    SensingInstance,
    make_chain_g,
    make_hard_chain,
    make_matrix_sensing,
    make_quadratic,
    make_quadratic_form,
    make_quartic,
    make_smooth_convex_bench,
)
from .optimizers import (
    DivergedError,
    StepSchedule,
    Trajectory,
    average_iterates,
    load_replay,
    rerun,
    run_nso,
    run_sgd,
    run_wp_sgd,
    save_replay,
    select_random_iterate,
)
from .oracles import (
    CoordinateBoundedNoise,
    ExactGradient,
    GradOracle,
    IsotropicGradientNoise,
    delta_xi_decomposition,
    nso_gradient_estimate,
)

__all__ = [
    "BoundInputs",
    "CONFIG_TYPES",
    "ConfigError",
    "ConvexRateConfig",
    "CoordinateBoundedNoise",
    "DivergedError",
    "EXPERIMENTS",
    "ExactGradient",
    "GradOracle",
    "IsotropicGradientNoise",
    "LowerBoundConfig",
    "MomentumConfig",
    "Objective",
    "PerturbationDist",
    "RateSweepConfig",
    "RngStream",
    "RunReport",
    "SensingConfig",
    "SensingInstance",
    "StepSchedule",
    "TaylorConfig",
    "TaylorReport",
    "TaylorRow",
    "Trajectory",
    "average_iterates",
    "convex_bound",
    "delta_xi_decomposition",
    "delta_xi_moments",
    "derive_stream",
    "exact_trace",
    "grad_F",
    "hutchinson_trace",
    "load_config",
    "load_replay",
    "make_chain_g",
    "make_hard_chain",
    "make_matrix_sensing",
    "make_quadratic",
    "make_quadratic_form",
    "make_quartic",
    "make_smooth_convex_bench",
    "momentum_grad_norm_series",
    "momentum_power_iterates",
    "nso_gradient_estimate",
    "optimal_eta",
    "power_lambda1",
    "rerun",
    "run_nso",
    "run_sgd",
    "run_wp_sgd",
    "save_replay",
    "select_random_iterate",
    "sensing_trace_deviation",
    "sensing_trace_formula",
    "taylor_gap",
    "theorem1_rhs",
    "theorem2_rhs",
    "value_F",
]
__version__ = "0.1.0"
