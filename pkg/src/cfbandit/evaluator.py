"""Counterfactual policy evaluation against exact ground truth.

Draws several stochastic logs ("folds") from a logging policy, estimates
the target policy's expected reward on each whole fold with the
reweighted and doubly controlled estimators, and reports how far the
estimates land from the enumerated truth — mean and spread of
(estimate - truth) across folds, on the x100 score scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

import numpy as np

from .core import Dataset, ValidationError
from .estimators import KINDS, Batch, DegenerateBatchError, Objective, estimate
from .policy import GibbsPolicy
from .sim import GroundTruth, candidate_reward_table, ground_truth, simulate_log

DEFAULT_ESTIMATORS = ("dpm_r", "dc", "chat_dc")


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 5
    eval_log_size: int = 10000  # instances logged per fold, capped at the split size
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        if self.folds < 1:
            raise ValidationError("folds must be >= 1")
        if self.eval_log_size < 1:
            raise ValidationError("eval_log_size must be >= 1")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        for kind in self.estimators:
            if kind not in KINDS:
                raise ValidationError(f"unknown estimator kind {kind!r}")
        if not self.estimators:
            raise ValidationError("need at least one estimator")


@dataclass
class EstimatorSummary:
    kind: str
    name: str  # stochastic-logging display name
    avg_diff: float  # mean(estimate - truth) x100
    std_dev: float  # std of estimates across folds, x100
    per_fold: list[Optional[float]]  # raw estimates in [0,1]; None = degenerate fold
    folds_used: int


@dataclass
class EvalReport:
    truth: GroundTruth
    folds: int
    split: str
    log_size: int
    estimators: list[EstimatorSummary]


def evaluate_policy(
    target_policy: GibbsPolicy,
    logging_policy: GibbsPolicy,
    dataset: Dataset,
    reward_model,
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Run the folded evaluation protocol; degenerate folds are excluded
    with a warning and the per-estimator fold count reflects that."""
    needs_model = any(Objective(k).needs_reward_model for k in config.estimators)
    if needs_model and reward_model is None:
        raise ValidationError("the doubly controlled estimators require a reward model")
    instances = sorted(dataset.split(config.split), key=lambda inst: inst.id)
    if not instances:
        raise ValidationError(f"dataset has no instances in split {config.split!r}")
    table = candidate_reward_table(dataset)
    truth = ground_truth(target_policy, dataset, config.split, reward_table=table)

    predictions = None
    if needs_model:
        predictions = {
            inst.id: reward_model.predict_batch(inst.feature_matrix) for inst in instances
        }

    log_size = min(config.eval_log_size, len(instances))
    values: dict[str, list[Optional[float]]] = {k: [] for k in config.estimators}
    for seq in np.random.SeedSequence(config.seed).spawn(config.folds):
        rng = np.random.default_rng(seq)
        if log_size < len(instances):
            pick = rng.choice(len(instances), size=log_size, replace=False)
            subset = [instances[i] for i in np.sort(pick)]
        else:
            subset = instances
        entries = simulate_log(
            logging_policy, dataset, "stochastic", rng, instances=subset, reward_table=table
        )
        batch = Batch(entries, subset)
        if predictions is not None:
            batch.with_predictions(np.concatenate([predictions[i.id] for i in subset]))
        for kind in config.estimators:
            try:
                value, _ = estimate(Objective(kind), target_policy, batch, reward_model)
                values[kind].append(value)
            except DegenerateBatchError:
                warnings.warn(
                    f"estimator {kind}: degenerate fold excluded "
                    "(target policy puts zero mass on every logged point)",
                    RuntimeWarning,
                )
                values[kind].append(None)

    summaries = []
    for kind in config.estimators:
        used = [v for v in values[kind] if v is not None]
        if not used:
            raise DegenerateBatchError(f"estimator {kind}: every fold was degenerate")
        arr = np.asarray(used, dtype=np.float64)
        summaries.append(
            EstimatorSummary(
                kind=kind,
                name=Objective(kind).display_name(stochastic=True),
                avg_diff=float((arr.mean() - truth.expected_reward) * 100.0),
                std_dev=float(arr.std() * 100.0),
                per_fold=values[kind],
                folds_used=len(used),
            )
        )
    return EvalReport(
        truth=truth,
        folds=config.folds,
        split=config.split,
        log_size=log_size,
        estimators=summaries,
    )


def round_half_away(x: float, places: int = 2) -> Decimal:
    """Decimal rounding with ties away from zero (0.005 -> 0.01)."""
    exp = Decimal(1).scaleb(-places)
    return Decimal(repr(float(x))).quantize(exp, rounding=ROUND_HALF_UP)


def render_report(report: EvalReport) -> tuple[dict, str]:
    """Structured record plus a fixed-width text table (x100 scale, 2 decimals)."""
    records = {
        "split": report.split,
        "folds": report.folds,
        "log_size": report.log_size,
        "ground_truth_expected_reward": report.truth.expected_reward,
        "ground_truth_onebest_corpus_bleu": report.truth.onebest_corpus_bleu,
        "estimators": [
            {
                "kind": s.kind,
                "name": s.name,
                "avg_estimate_minus_truth_x100": s.avg_diff,
                "std_dev_x100": s.std_dev,
                "folds_used": s.folds_used,
                "per_fold_estimates": s.per_fold,
            }
            for s in report.estimators
        ],
    }
    width = max(9, max(len(s.name) for s in report.estimators))
    lines = [
        f"ground truth expected reward: {round_half_away(report.truth.expected_reward * 100):.2f}"
        f" (one-best corpus: {round_half_away(report.truth.onebest_corpus_bleu * 100):.2f})",
        f"{'estimator':<{width}}  {'avg(est-truth)':>14}  {'std':>8}  {'folds':>5}",
    ]
    for s in report.estimators:
        lines.append(
            f"{s.name:<{width}}  {round_half_away(s.avg_diff):>+14.2f}  "
            f"{round_half_away(s.std_dev):>8.2f}  {s.folds_used:>5d}"
        )
    return records, "\n".join(lines) + "\n"
