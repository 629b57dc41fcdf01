"""Forward-backward RRT solver for finite-horizon stochastic optimal control."""

from .backward import (
    BackwardArtifacts,
    BackwardPassError,
    backward_pass,
    bsde_target,
    default_lambda_grid,
    lambda_search,
    path_heuristic,
    softmin_weights,
    target_policy,
    target_policy_batch,
)
from .basis import (
    SingularRegressionError,
    ValueCoefficients,
    feature_count,
    feature_grad,
    features,
    quadratic_to_coefficients,
    value_eval,
    value_grad,
    weighted_least_squares,
)
from .forward import ForwardConfig, euler_maruyama_step, forward_expand, parallel_forward_baseline
from .problem import (
    ControlProblem,
    TimeGrid,
    make_double_integrator_l1,
    make_lq_problem,
    make_pendulum_l1,
    make_uncontrolled_heat,
    validate_problem,
)
from .solver import (
    RolloutReport,
    RunReport,
    SolverConfig,
    SolverError,
    analytic_heat_value,
    comparison_report,
    fbrrt_solve,
    heat_value_at,
    riccati_oracle,
    rollout_policy,
)
from .tree import BranchTree, TreeNode, default_metric_weights

__all__ = [
    "BackwardArtifacts",
    "BackwardPassError",
    "BranchTree",
    "ControlProblem",
    "ForwardConfig",
    "RolloutReport",
    "RunReport",
    "SingularRegressionError",
    "SolverConfig",
    "SolverError",
    "TimeGrid",
    "TreeNode",
    "ValueCoefficients",
    "analytic_heat_value",
    "backward_pass",
    "bsde_target",
    "comparison_report",
    "default_lambda_grid",
    "default_metric_weights",
    "euler_maruyama_step",
    "fbrrt_solve",
    "feature_count",
    "feature_grad",
    "features",
    "forward_expand",
    "heat_value_at",
    "lambda_search",
    "make_double_integrator_l1",
    "make_lq_problem",
    "make_pendulum_l1",
    "make_uncontrolled_heat",
    "parallel_forward_baseline",
    "path_heuristic",
    "quadratic_to_coefficients",
    "riccati_oracle",
    "rollout_policy",
    "softmin_weights",
    "target_policy",
    "target_policy_batch",
    "validate_problem",
    "value_eval",
    "value_grad",
    "weighted_least_squares",
]
