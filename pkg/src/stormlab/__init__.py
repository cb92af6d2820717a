"""stormlab: adaptive momentum-based variance-reduced optimizers on synthetic
stochastic problems, with diagnostics that check the algorithms' defining
identities numerically."""

from .core import CompensatedSum, SampleKey, comp_add, derive_key, key_rng, sq_norm
from .diagnostics import (
    AggregateStats,
    StateRecord,
    TraceRecord,
    aggregate,
    slope_estimate,
    verify_momentum_identity,
    verify_recursion,
)
from .errors import ConfigError, DivergedError
from .optimizers import (
    HeuristicState,
    OptimizerState,
    RunResult,
    StepReport,
    init,
    run,
    step,
)
from .problems import (
    LeastSquaresRowSampling,
    NoisyQuadratic,
    NonconvexRegularizedLogistic,
    Problem,
    estimate_constants,
    finite_diff_grad,
    make_least_squares,
    make_logistic,
    make_problem,
)
from .schedules import (
    ALGORITHMS,
    HyperParams,
    default_hyperparams,
    momentum_ms,
    momentum_na,
    momentum_sg,
    oracle_tuned_constants,
    stepsize,
    stepsize_stormplus,
    validate_hyperparams,
)

__version__ = "0.1.0"
