"""Counterfactual learning and evaluation for bandit structured prediction.

Learn and evaluate linear Gibbs policies over closed candidate sets from
logged (deterministic or stochastic) single-choice feedback: propensity
matching objectives with multiplicative and additive control variates,
direct reward regression, exact enumeration ground truth on synthetic
tasks, and corpus-level significance reporting.
"""

from .core import (
    Candidate,
    Dataset,
    Instance,
    LoadedLog,
    LogEntry,
    ParseError,
    ValidationError,
    read_dataset,
    read_log,
    write_dataset,
    write_log,
)
from .estimators import (
    Batch,
    DegenerateBatchError,
    EstimatorDiagnostics,
    Objective,
    estimate,
    gradient,
    importance_weights,
    optimal_c,
)
from .evaluator import EvalConfig, EvalReport, evaluate_policy, render_report
from .metrics import (
    BleuConfig,
    BleuStats,
    SignificanceResult,
    ar_test,
    corpus_bleu,
    pair_stats,
    sentence_bleu,
)
from .policy import GibbsPolicy, load_policy, save_policy
from .reward_model import (
    RewardModel,
    RewardModelConfig,
    RewardModelReport,
    cross_validate,
    fit,
    load_model,
    pairs_from_log,
    save_model,
)
from .sim import GroundTruth, TaskConfig, generate_task, ground_truth, simulate_log
from .trainer import (
    AdadeltaState,
    Checkpoint,
    TrainConfig,
    TrainTrajectory,
    TrainingAbort,
    adadelta_step,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdadeltaState",
    "Batch",
    "BleuConfig",
    "BleuStats",
    "Candidate",
    "Checkpoint",
    "Dataset",
    "DegenerateBatchError",
    "EstimatorDiagnostics",
    "EvalConfig",
    "EvalReport",
    "GibbsPolicy",
    "GroundTruth",
    "Instance",
    "LoadedLog",
    "LogEntry",
    "Objective",
    "ParseError",
    "RewardModel",
    "RewardModelConfig",
    "RewardModelReport",
    "SignificanceResult",
    "TaskConfig",
    "TrainConfig",
    "TrainTrajectory",
    "TrainingAbort",
    "ValidationError",
    "adadelta_step",
    "ar_test",
    "corpus_bleu",
    "cross_validate",
    "estimate",
    "evaluate_policy",
    "fit",
    "generate_task",
    "gradient",
    "ground_truth",
    "importance_weights",
    "load_model",
    "load_policy",
    "optimal_c",
    "pair_stats",
    "pairs_from_log",
    "read_dataset",
    "read_log",
    "render_report",
    "save_model",
    "save_policy",
    "sentence_bleu",
    "sgd_step",
    "simulate_log",
    "train",
    "write_dataset",
    "write_log",
]
