from .estimator import (
    BatchContributionEstimator,
    CacheMode,
    ContributionScore,
    EstimatorConfig,
    EstimatorKind,
    GradCache,
    contribution_grad_cache,
    contribution_grad_dot,
    contribution_loss_diff,
    contribution_single_offline,
    generated_only_gradient,
)
from .gate import GateConfig, GateDecision, GateKind, GatePolicy, acceptance_rate, decide
from .trainer import (
    RunConfig,
    RunMode,
    TrainReport,
    WorkerGroup,
    evaluate,
    run_baseline,
    run_bsgal,
    run_offline_filter,
    run_random_dropout,
)

__all__ = [
    "BatchContributionEstimator", "CacheMode", "ContributionScore", "EstimatorConfig", "EstimatorKind", "GradCache",
    "contribution_grad_cache", "contribution_grad_dot", "contribution_loss_diff", "contribution_single_offline",
    "generated_only_gradient",
    "GateConfig", "GateDecision", "GateKind", "GatePolicy", "acceptance_rate", "decide",
    "RunConfig", "RunMode", "TrainReport", "WorkerGroup", "evaluate",
    "run_baseline", "run_bsgal", "run_offline_filter", "run_random_dropout",
]
