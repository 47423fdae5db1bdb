"""Robust least-squares policy evaluation and iteration with linear features."""
from .errors import (
    AssumptionViolation,
    ConfigError,
    DomainError,
    NonContractionError,
    NonConvergenceError,
    NumericError,
    RankError,
    RobustLSPIError,
    SolverError,
    UnsupportedVariantError,
)
from .features import FeatureMatrix, Polynomial, RbfGrid, StackedActions, Tabular, feature_eval
from .learner import (
    LearnerState,
    PowerLaw,
    SampleBlock,
    SetEvaluator,
    TransitionSample,
    iterate_frozen,
    learner_from_statistics,
    learner_init,
    learner_step,
    observe,
    robust_correction,
    run_to_convergence,
)
from .linear_fa import (
    approx_robust_td_apply,
    exact_projected_fixed_point,
    project,
    steady_state,
    verify_exploration_assumption,
)
from .rlspi import (
    IterationRecord,
    PolicyIterationConfig,
    UncertaintyBinding,
    evaluate_policy_robust,
    greedy_policy,
    lspi_run,
    rlspi_run,
)
from .rmdp import (
    TabularRmdp,
    nonrobust_value,
    robust_bellman_optimal,
    robust_bellman_policy,
    robust_policy_evaluation_exact,
    robust_td_lambda_apply,
    robust_value_iteration,
)
from .uncertainty import (
    CenteredSphere,
    ContractionInputs,
    Degenerate,
    FiniteVertices,
    SimplexSphere,
    contraction_coefficient,
    set_distance_rho,
    support_inf,
    support_inf_gram,
)

__version__ = "0.1.0"
