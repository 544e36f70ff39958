"""Mini-batch policy optimization on counterfactual objectives.

Each step draws the next seeded-shuffled mini-batch from the log,
computes the objective's loss-scale gradient, and applies plain SGD or
Adadelta.  Every eval_every steps the current policy's one-best corpus
score on the validation split is recorded; the returned policy is the
checkpoint that scored highest (early stopping), which may be the
initial policy itself.

Runs are bit-reproducible given (log, config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import Dataset, LogEntry, ValidationError
from .estimators import Batch, Objective, estimate, gradient
from .metrics import BleuConfig, BleuStats, pair_stats, score_stats
from .policy import GibbsPolicy, flatten_instances

OPTIMIZERS = ("sgd", "adadelta")


class TrainingAbort(RuntimeError):
    """Training hit a non-finite gradient or weight vector."""


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "dpm_r"
    batch_size: int = 500
    optimizer: str = "adadelta"
    learning_rate: float = 1e-4  # sgd only
    rho: float = 0.95  # adadelta decay
    epsilon: float = 1e-6  # adadelta stabilizer
    max_epochs: int = 20
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        Objective(self.objective)  # validates the kind
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(
                f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}"
            )
        if self.optimizer == "sgd" and self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if not (0.0 < self.rho < 1.0):
            raise ValidationError("rho must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be >= 1")


def sgd_step(weights: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
    """w - eta * g, nothing else (no implicit regularization)."""
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(grad)) and math.isfinite(learning_rate)):
        raise ValidationError("sgd_step requires finite inputs")
    return weights - learning_rate * grad


@dataclass
class AdadeltaState:
    """Per-feature running second moments of gradients and updates."""

    avg_sq_grad: np.ndarray
    avg_sq_delta: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "AdadeltaState":
        return cls(np.zeros(dim), np.zeros(dim))


def adadelta_step(
    state: AdadeltaState,
    weights: np.ndarray,
    grad: np.ndarray,
    rho: float = 0.95,
    epsilon: float = 1e-6,
) -> tuple[AdadeltaState, np.ndarray]:
    """One accumulator update and weight step; returns (new state, new weights)."""
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(grad))):
        raise ValidationError("adadelta_step requires finite inputs")
    avg_sq_grad = rho * state.avg_sq_grad + (1.0 - rho) * grad**2
    delta = -np.sqrt(state.avg_sq_delta + epsilon) / np.sqrt(avg_sq_grad + epsilon) * grad
    avg_sq_delta = rho * state.avg_sq_delta + (1.0 - rho) * delta**2
    return AdadeltaState(avg_sq_grad, avg_sq_delta), weights + delta


@dataclass
class Checkpoint:
    step: int  # batches applied so far
    objective_value: Optional[float]  # batch estimate under the pre-step policy
    validation_bleu: float
    c_hat: Optional[float]
    c_hat_is_fallback: Optional[bool]
    weight_norm: float

    def as_record(self) -> dict:
        return {
            "step": self.step,
            "objective_value": self.objective_value,
            "validation_bleu": self.validation_bleu,
            "c_hat": self.c_hat,
            "c_hat_is_fallback": self.c_hat_is_fallback,
            "weight_norm": self.weight_norm,
        }


@dataclass
class TrainTrajectory:
    checkpoints: list[Checkpoint]
    best_checkpoint: int  # index into checkpoints (first maximum of validation score)
    final_policy: GibbsPolicy  # weights of the best checkpoint

    @property
    def best(self) -> Checkpoint:
        return self.checkpoints[self.best_checkpoint]


class _ValidationScorer:
    """One-best corpus score of a weight vector, from precomputed stats."""

    def __init__(self, instances):
        for inst in instances:
            if inst.reference is None:
                raise ValidationError(f"validation instance {inst.id} has no reference")
        self.offsets, self.features = flatten_instances(instances)
        n_flat = self.features.shape[0]
        self.matches = np.zeros((n_flat, 4), dtype=np.int64)
        self.totals = np.zeros((n_flat, 4), dtype=np.int64)
        self.hyp_len = np.zeros(n_flat, dtype=np.int64)
        self.ref_len_total = 0
        row = 0
        for inst in instances:
            self.ref_len_total += len(inst.reference)
            for cand in inst.candidates:
                st = pair_stats(cand.tokens, inst.reference, 4)
                self.matches[row] = st.matches
                self.totals[row] = st.totals
                self.hyp_len[row] = st.hyp_len
                row += 1

    def score(self, policy: GibbsPolicy) -> float:
        scores = self.features @ policy.weights
        best = _kernels.segment_argmax(scores, self.offsets)
        chosen = self.offsets[:-1] + best
        pooled = BleuStats(
            matches=self.matches[chosen].sum(axis=0),
            totals=self.totals[chosen].sum(axis=0),
            hyp_len=int(self.hyp_len[chosen].sum()),
            ref_len=self.ref_len_total,
        )
        return score_stats(pooled, BleuConfig(smoothing="none"))


def train(
    log: Sequence[LogEntry],
    dataset: Dataset,
    initial_policy: GibbsPolicy,
    config: TrainConfig,
    reward_model=None,
) -> TrainTrajectory:
    """Optimize the configured objective on a log; early-stop on validation."""
    entries = list(log)
    if not entries:
        raise ValidationError("training log is empty")
    objective = Objective(config.objective)
    if objective.needs_reward_model and reward_model is None:
        raise ValidationError(f"objective {config.objective!r} requires a reward model")

    instances = []
    for e in entries:
        if e.instance_id not in dataset.instances:
            raise ValidationError(f"log entry references unknown instance {e.instance_id}")
        instances.append(dataset[e.instance_id])

    val_instances = sorted(dataset.split("validation"), key=lambda inst: inst.id)
    if not val_instances:
        raise ValidationError("early stopping needs a validation split")
    scorer = _ValidationScorer(val_instances)

    predictions: dict[int, np.ndarray] = {}
    if objective.needs_reward_model:
        for inst in {i.id: i for i in instances}.values():
            predictions[inst.id] = reward_model.predict_batch(inst.feature_matrix)

    weights = initial_policy.weights.copy()
    policy = initial_policy.with_weights(weights)
    opt_state = AdadeltaState.zeros(policy.dim)
    rng = np.random.default_rng(config.seed)

    checkpoints = [
        Checkpoint(
            step=0,
            objective_value=None,
            validation_bleu=scorer.score(policy),
            c_hat=None,
            c_hat_is_fallback=None,
            weight_norm=float(np.linalg.norm(weights)),
        )
    ]
    best_idx = 0
    best_weights = weights.copy()

    n = len(entries)
    beta = config.batch_size
    keep_floor = max(2.0, beta / 10.0)  # partial tails below this destabilize reweighting
    step = 0
    for _ in range(config.max_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, beta):
            sel = perm[start : start + beta]
            if sel.shape[0] < beta and sel.shape[0] < keep_floor:
                continue
            batch = Batch([entries[i] for i in sel], [instances[i] for i in sel])
            if predictions:
                batch.with_predictions(
                    np.concatenate([predictions[instances[i].id] for i in sel])
                )
            record = (step + 1) % config.eval_every == 0
            value = diags = None
            if record:
                value, diags = estimate(objective, policy, batch, reward_model)
            grad = gradient(objective, policy, batch, reward_model)
            if not np.all(np.isfinite(grad)):
                raise TrainingAbort(
                    f"non-finite gradient at step {step + 1} "
                    f"(weight norm {np.linalg.norm(weights):.3g})"
                )
            if config.optimizer == "sgd":
                weights = sgd_step(weights, grad, config.learning_rate)
            else:
                opt_state, weights = adadelta_step(
                    opt_state, weights, grad, config.rho, config.epsilon
                )
            if not np.all(np.isfinite(weights)):
                raise TrainingAbort(f"non-finite weights after step {step + 1}")
            policy = policy.with_weights(weights)
            step += 1
            if record:
                val = scorer.score(policy)
                checkpoints.append(
                    Checkpoint(
                        step=step,
                        objective_value=float(value),
                        validation_bleu=val,
                        c_hat=diags.c_hat,
                        c_hat_is_fallback=diags.c_hat_is_fallback,
                        weight_norm=float(np.linalg.norm(weights)),
                    )
                )
                if val > checkpoints[best_idx].validation_bleu:
                    best_idx = len(checkpoints) - 1
                    best_weights = weights.copy()

    return TrainTrajectory(
        checkpoints=checkpoints,
        best_checkpoint=best_idx,
        final_policy=initial_policy.with_weights(best_weights),
    )
