"""Linear-quadratic control of stochastic Volterra integral equations.

Numerical solvers for the Riccati-Volterra system characterizing causal
feedback optimal strategies, the associated Lyapunov-Volterra and backward
(EBSVIE) equations, Monte Carlo simulation of the controlled dynamics, and a
classical Riccati ODE oracle for cross-validation.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    InvalidArgumentError,
    KernelNotSquareIntegrableError,
    NearSingularGainWarning,
    NotSDEReducibleError,
    OracleFailureError,
    SolverDivergenceError,
)
from .classical import SDEProblem, riccati_ode, sde_reduction_compare
from .ebsvie import EtaField, optimal_inhomogeneous, solve_ebsvie, value_functional
from .fields import (
    MatrixField,
    PiPair,
    Problem,
    Strategy,
    TriangleKernel,
    build_problem,
    problem_to_config,
    validate_problem,
    zero_strategy,
)
from .lyapunov import LyapunovRHS, gain_coefficients, quadratic_form, solve_lyapunov
from .riccati import (
    RegularityReport,
    RiccatiSolution,
    direct_march,
    gain_update,
    kleinman_solve,
    pinv_threshold,
    regularity_report,
)
from .simulate import (
    SimBatch,
    duality_check,
    estimate_cost,
    frechet_check,
    simulate_closed_loop,
)
from .timegrid import TimeGrid, WeightTable, make_grid, singular_weights, tail_integral
from .volterra_ops import MeanFlow, build_mean_flow, lint, mean_state, resolvent, rint, sandwich

__all__ = [
    "ConfigError",
    "EtaField",
    "InvalidArgumentError",
    "KernelNotSquareIntegrableError",
    "LyapunovRHS",
    "MatrixField",
    "MeanFlow",
    "NearSingularGainWarning",
    "NotSDEReducibleError",
    "OracleFailureError",
    "PiPair",
    "Problem",
    "RegularityReport",
    "RiccatiSolution",
    "SDEProblem",
    "SimBatch",
    "SolverDivergenceError",
    "Strategy",
    "TimeGrid",
    "TriangleKernel",
    "WeightTable",
    "build_mean_flow",
    "build_problem",
    "direct_march",
    "duality_check",
    "estimate_cost",
    "frechet_check",
    "gain_coefficients",
    "gain_update",
    "kleinman_solve",
    "lint",
    "make_grid",
    "mean_state",
    "optimal_inhomogeneous",
    "pinv_threshold",
    "problem_to_config",
    "quadratic_form",
    "regularity_report",
    "resolvent",
    "riccati_ode",
    "rint",
    "sandwich",
    "sde_reduction_compare",
    "simulate_closed_loop",
    "singular_weights",
    "solve_ebsvie",
    "solve_lyapunov",
    "tail_integral",
    "validate_problem",
    "value_functional",
    "zero_strategy",
    "__version__",
]
