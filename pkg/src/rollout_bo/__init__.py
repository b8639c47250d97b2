"""Non-myopic Bayesian optimization by rollout with an adaptive rolling horizon."""
from .acquisition import (
    BudgetExhausted,
    Candidate,
    SearchConfig,
    SourceCost,
    StageReward,
    greedy_kg_select,
    kg_stage_reward,
)
from .design import fill_distance, minimax_design
from .gp import (
    Dataset,
    GpModel,
    GpNumericalError,
    KernelSpec,
    SourceModelSpec,
    fit_mle,
    log_marginal_likelihood,
    posterior,
    sigma_tilde,
)
from .horizon import ErrorBoundParams, HorizonDecision, PhiMode, error_bound, feasible_horizon, power_function
from .optim import BoxBounds, OptimizationError, maximize
from .quadrature import QuadratureRule, expect_max_affine, gauss_hermite
from .rollout import RolloutConfig, RolloutValue, end_stage_report, rollout_value, select_next
from .sources import BiasedSourceSpec, ObjectiveSpec, evaluate_source

__version__ = "0.1.0"

__all__ = [
    "BudgetExhausted",
    "Candidate",
    "SearchConfig",
    "SourceCost",
    "StageReward",
    "greedy_kg_select",
    "kg_stage_reward",
    "fill_distance",
    "minimax_design",
    "Dataset",
    "GpModel",
    "GpNumericalError",
    "KernelSpec",
    "SourceModelSpec",
    "fit_mle",
    "log_marginal_likelihood",
    "posterior",
    "sigma_tilde",
    "ErrorBoundParams",
    "HorizonDecision",
    "PhiMode",
    "error_bound",
    "feasible_horizon",
    "power_function",
    "BoxBounds",
    "OptimizationError",
    "maximize",
    "QuadratureRule",
    "expect_max_affine",
    "gauss_hermite",
    "RolloutConfig",
    "RolloutValue",
    "end_stage_report",
    "rollout_value",
    "select_next",
    "BiasedSourceSpec",
    "ObjectiveSpec",
    "evaluate_source",
]
