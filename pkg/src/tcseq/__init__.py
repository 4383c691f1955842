"""Temporally consistent incremental classification on absorbing Markov chains."""

__version__ = "0.1.0"

from .estimation import (
    DirectEstimator,
    EmpiricalChain,
    EstimateReport,
    IndirectEstimator,
    build_empirical_chain,
    estimate_direct,
    estimate_indirect,
)
from .exceptions import (
    ChainStructureError,
    DatasetError,
    InvalidChainError,
    NonConvergenceError,
    SolverError,
    TrainingDivergedError,
    TrajectoryCapError,
)
from .experiments import (
    ExperimentReport,
    LayeredChainSpec,
    build_layered_chain,
    run_consistency_study,
    run_lambda_sweep,
    run_mse_ratio_study,
)
from .losses import (
    TargetSchedule,
    compute_targets,
    cross_entropy,
    kl_divergence,
    sequence_loss,
    sequence_loss_grad,
    softmax,
)
from .markov import (
    Dataset,
    MarkovChain,
    Trajectory,
    ValidationReport,
    absorption_horizon,
    sample_trajectories,
    solve_absorption_closed_form,
    solve_absorption_fixed_point,
    validate_chain,
)
from .metrics import (
    EvalRecord,
    accuracy,
    mean_nll,
    mean_successive_kl,
    roc_auc_ovr_macro,
)
from .trainer import (
    TabularClassifier,
    TCLambdaClassifier,
    TrainConfig,
    TrainReport,
    fit_gradient,
    fit_tabular_tc,
    predict_prefix,
    train_step,
)

__all__ = [
    "__version__",
    "DirectEstimator",
    "EmpiricalChain",
    "EstimateReport",
    "IndirectEstimator",
    "build_empirical_chain",
    "estimate_direct",
    "estimate_indirect",
    "ChainStructureError",
    "DatasetError",
    "InvalidChainError",
    "NonConvergenceError",
    "SolverError",
    "TrainingDivergedError",
    "TrajectoryCapError",
    "ExperimentReport",
    "LayeredChainSpec",
    "build_layered_chain",
    "run_consistency_study",
    "run_lambda_sweep",
    "run_mse_ratio_study",
    "TargetSchedule",
    "compute_targets",
    "cross_entropy",
    "kl_divergence",
    "sequence_loss",
    "sequence_loss_grad",
    "softmax",
    "Dataset",
    "MarkovChain",
    "Trajectory",
    "ValidationReport",
    "absorption_horizon",
    "sample_trajectories",
    "solve_absorption_closed_form",
    "solve_absorption_fixed_point",
    "validate_chain",
    "EvalRecord",
    "accuracy",
    "mean_nll",
    "mean_successive_kl",
    "roc_auc_ovr_macro",
    "TabularClassifier",
    "TCLambdaClassifier",
    "TrainConfig",
    "TrainReport",
    "fit_gradient",
    "fit_tabular_tc",
    "predict_prefix",
    "train_step",
]
