"""Decentralized consensus optimization over synchronous peer-to-peer
networks: a primal-dual quasi-Newton method and first/second-order baselines,
executed on a locality-enforcing simulator with per-round exchange accounting.
"""

from .algorithms import (
    AlgorithmConfig,
    NodeState,
    StepsizeSearchError,
    VARIANT_NAMES,
    VARIANTS,
    init_states,
    inject_saddle_point,
    rounds_per_iteration,
    tune_stepsize,
)
from .network import (
    Topology,
    WeightMatrix,
    WeightMatrixError,
    build_d_regular_cycle,
    make_topology,
    metropolis_weights,
    validate_weight_matrix,
    weight_matrix_from_entries,
)
from .problems import (
    LogisticProblem,
    QuadraticProblem,
    ReferenceSolution,
    centralized_solution,
    generate_logistic,
    generate_quadratic,
    problem_from_spec,
    validate_problem_spec,
)
from .simulator import (
    ConvergenceTrace,
    ExchangeAccountingError,
    ExchangeLedger,
    LocalityError,
    Network,
    NonFiniteAbort,
    compute_diagnostics,
    relative_error,
    run,
    sweep_seeds,
)

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "ConvergenceTrace",
    "ExchangeAccountingError",
    "ExchangeLedger",
    "LocalityError",
    "LogisticProblem",
    "Network",
    "NodeState",
    "NonFiniteAbort",
    "QuadraticProblem",
    "ReferenceSolution",
    "StepsizeSearchError",
    "Topology",
    "VARIANT_NAMES",
    "VARIANTS",
    "WeightMatrix",
    "WeightMatrixError",
    "build_d_regular_cycle",
    "centralized_solution",
    "compute_diagnostics",
    "generate_logistic",
    "generate_quadratic",
    "init_states",
    "inject_saddle_point",
    "make_topology",
    "metropolis_weights",
    "problem_from_spec",
    "relative_error",
    "rounds_per_iteration",
    "run",
    "sweep_seeds",
    "tune_stepsize",
    "validate_problem_spec",
    "validate_weight_matrix",
    "weight_matrix_from_entries",
    "__version__",
]
