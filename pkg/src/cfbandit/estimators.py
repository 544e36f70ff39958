"""Counterfactual objectives: values, gradients, and control variates.

All estimators report values on the reward scale (higher is better) and
gradients on the loss scale (suitable for gradient descent).  Deterministic
logging is the propensity-1 special case, so the reweighted deterministic
objective and reweighted inverse propensity scoring share one code path;
likewise for the doubly controlled variants.

Kinds:
  dpm      mean of reward * target probability at logged points
  dpm_r    self-normalized reweighting (multiplicative control variate);
           equals reweighted inverse propensity scoring on stochastic logs
  dc       doubly controlled: reweighted residual against a reward model
           plus the model's expectation under the target policy (c = 1)
  chat_dc  doubly controlled with the variance-minimizing scalar c
  ips      plain inverse propensity scoring
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import Dataset, Instance, LogEntry, ValidationError
from .policy import GibbsPolicy

KINDS = ("dpm", "dpm_r", "dc", "chat_dc", "ips")

_DISPLAY = {
    "dpm": ("DPM", "DPM"),
    "dpm_r": ("DPM+R", "IPS+R"),
    "dc": ("DC", "DR"),
    "chat_dc": ("cDC", "cDR"),
    "ips": ("IPS", "IPS"),
}

VAR_FLOOR = 1e-12  # below this sample variance the optimal c falls back to 1


class DegenerateBatchError(RuntimeError):
    """The target policy assigns zero mass to every logged point in a batch."""


@dataclass(frozen=True)
class Objective:
    """Which counterfactual objective to evaluate or optimize."""

    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")

    @property
    def use_optimal_c(self) -> bool:
        return self.kind == "chat_dc"

    @property
    def needs_reward_model(self) -> bool:
        return self.kind in ("dc", "chat_dc")

    def display_name(self, stochastic: bool = False) -> str:
        return _DISPLAY[self.kind][1 if stochastic else 0]


class Batch:
    """Log entries resolved against their instances, in flat kernel layout."""

    def __init__(self, entries: Sequence[LogEntry], instances: Sequence[Instance]):
        if len(entries) == 0:
            raise ValidationError("batch must be non-empty")
        if len(entries) != len(instances):
            raise ValidationError("entries and instances must be parallel")
        for e, inst in zip(entries, instances):
            if e.instance_id != inst.id:
                raise ValidationError(f"entry references instance {e.instance_id}, got {inst.id}")
            if not (0 <= e.candidate_id < inst.num_candidates):
                raise ValidationError(
                    f"entry candidate {e.candidate_id} out of range for instance {inst.id}"
                )
        self.entries = list(entries)
        self.instances = list(instances)
        sizes = np.array([inst.num_candidates for inst in instances], dtype=np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        self.features_flat = np.ascontiguousarray(
            np.concatenate([inst.feature_matrix for inst in instances], axis=0)
        )
        self.chosen = np.array([e.candidate_id for e in entries], dtype=np.int64)
        self.rewards = np.array([e.reward for e in entries], dtype=np.float64)
        self.propensities = np.array([e.propensity for e in entries], dtype=np.float64)
        self.predicted_flat: Optional[np.ndarray] = None  # optional reward-model cache

    @classmethod
    def from_entries(cls, entries: Sequence[LogEntry], dataset: Dataset) -> "Batch":
        instances = []
        for e in entries:
            if e.instance_id not in dataset.instances:
                raise ValidationError(f"entry references unknown instance {e.instance_id}")
            instances.append(dataset[e.instance_id])
        return cls(entries, instances)

    def __len__(self) -> int:
        return len(self.entries)

    def with_predictions(self, predicted_flat: np.ndarray) -> "Batch":
        if predicted_flat.shape[0] != self.features_flat.shape[0]:
            raise ValidationError("predicted rewards must cover every candidate row")
        self.predicted_flat = np.asarray(predicted_flat, dtype=np.float64)
        return self


@dataclass
class EstimatorDiagnostics:
    """Per-batch telemetry emitted alongside every estimate."""

    c_hat: float
    c_hat_is_fallback: bool
    weight_sum: float
    min_weight: float
    max_weight: float
    direct_term_value: float


def _probabilities_flat(policy: GibbsPolicy, batch: Batch) -> np.ndarray:
    if batch.features_flat.shape[1] != policy.dim:
        raise ValidationError(
            f"batch feature dim {batch.features_flat.shape[1]} != policy dim {policy.dim}"
        )
    scores = batch.features_flat @ policy.weights
    if not np.all(np.isfinite(scores)):
        raise ValidationError("non-finite candidate score in batch")
    cap = 0 if policy.nbest_cap is None else policy.nbest_cap
    return _kernels.batch_gibbs(scores, batch.offsets, policy.alpha, cap)


def _chosen_probabilities(probs_flat: np.ndarray, batch: Batch) -> np.ndarray:
    return probs_flat[batch.offsets[:-1] + batch.chosen]


def importance_weights(policy: GibbsPolicy, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Raw weights rho = target prob / propensity, and rho normalized to batch mean 1."""
    probs_flat = _probabilities_flat(policy, batch)
    rho = _chosen_probabilities(probs_flat, batch) / batch.propensities
    mean_rho = float(np.mean(rho))
    if mean_rho <= 0.0:
        raise DegenerateBatchError(
            "target policy assigns zero probability to every logged point in the batch"
        )
    return rho, rho / mean_rho


def optimal_c(observed, predicted) -> float:
    """Variance-minimizing scalar for the additive control variate.

    Ratio of sample covariance to sample variance of the predictions;
    falls back to 1.0 when the prediction variance is below VAR_FLOOR.
    """
    c, _ = _optimal_c_flagged(observed, predicted)
    return c


def _optimal_c_flagged(observed, predicted) -> tuple[float, bool]:
    x = np.asarray(observed, dtype=np.float64)
    y = np.asarray(predicted, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("observed and predicted must be equal-length vectors")
    n = x.shape[0]
    if n < 2:
        raise ValidationError("optimal c needs at least two samples")
    xc = x - x.mean()
    yc = y - y.mean()
    var_y = float(yc @ yc) / (n - 1)
    if var_y < VAR_FLOOR:
        return 1.0, True
    cov = float(xc @ yc) / (n - 1)
    return cov / var_y, False


def _predictions(batch: Batch, reward_model) -> np.ndarray:
    if batch.predicted_flat is not None:
        return batch.predicted_flat
    if reward_model is None:
        raise ValidationError("this objective requires a reward model")
    return reward_model.predict_batch(batch.features_flat)


def _segment_sums(values_flat: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    return np.add.reduceat(values_flat, offsets[:-1])


def estimate(
    objective: Objective,
    policy: GibbsPolicy,
    batch: Batch,
    reward_model=None,
) -> tuple[float, EstimatorDiagnostics]:
    """Expected-reward estimate of the target policy on one batch."""
    beta = len(batch)
    probs_flat = _probabilities_flat(policy, batch)
    chosen_prob = _chosen_probabilities(probs_flat, batch)
    rho = chosen_prob / batch.propensities
    weight_sum = float(rho.sum())
    mean_rho = weight_sum / beta

    c_hat = 0.0
    c_fallback = False
    direct_term = 0.0

    if objective.kind == "dpm":
        value = float(np.mean(batch.rewards * chosen_prob))
    elif objective.kind == "ips":
        value = float(np.mean(batch.rewards * rho))
    else:
        if mean_rho <= 0.0:
            raise DegenerateBatchError(
                "target policy assigns zero probability to every logged point in the batch"
            )
        rho_bar = rho / mean_rho
        if objective.kind == "dpm_r":
            value = float(np.mean(batch.rewards * rho_bar))
        else:
            pred_flat = _predictions(batch, reward_model)
            pred_chosen = pred_flat[batch.offsets[:-1] + batch.chosen]
            if objective.use_optimal_c:
                c_hat, c_fallback = _optimal_c_flagged(batch.rewards, pred_chosen)
            else:
                c_hat = 1.0
            direct_values = _segment_sums(probs_flat * pred_flat, batch.offsets)
            direct_term = float(np.mean(direct_values))
            residual = float(np.mean((batch.rewards - c_hat * pred_chosen) * rho_bar))
            value = residual + c_hat * direct_term

    if mean_rho > 0.0:
        rho_bar = rho / mean_rho
        min_w, max_w = float(rho_bar.min()), float(rho_bar.max())
    else:
        min_w = max_w = 0.0
    diags = EstimatorDiagnostics(
        c_hat=c_hat,
        c_hat_is_fallback=c_fallback,
        weight_sum=weight_sum,
        min_weight=min_w,
        max_weight=max_w,
        direct_term_value=direct_term,
    )
    return value, diags


def gradient(
    objective: Objective,
    policy: GibbsPolicy,
    batch: Batch,
    reward_model=None,
) -> np.ndarray:
    """Loss-scale gradient of the objective w.r.t. the policy weights.

    Exact derivative of -estimate(...), with the control-variate scalar c
    treated as a constant within the batch (it does not depend on the
    weights, so this is exact).
    """
    beta = len(batch)
    probs_flat = _probabilities_flat(policy, batch)
    chosen_prob, log_grads = _kernels.chosen_stats(
        probs_flat, batch.offsets, batch.chosen, batch.features_flat, policy.alpha
    )
    rho = chosen_prob / batch.propensities
    mean_rho = float(np.mean(rho))

    if objective.kind == "dpm":
        coef = batch.rewards * chosen_prob
        return -(coef @ log_grads) / beta
    if objective.kind == "ips":
        coef = batch.rewards * rho
        return -(coef @ log_grads) / beta

    if mean_rho <= 0.0:
        raise DegenerateBatchError(
            "target policy assigns zero probability to every logged point in the batch"
        )
    rho_bar = rho / mean_rho
    weighted_mean_grad = (rho_bar @ log_grads) / beta

    if objective.kind == "dpm_r":
        coef = batch.rewards * rho_bar
        return -((coef @ log_grads) / beta - float(coef.sum()) / beta * weighted_mean_grad)

    pred_flat = _predictions(batch, reward_model)
    pred_chosen = pred_flat[batch.offsets[:-1] + batch.chosen]
    if objective.use_optimal_c:
        c_hat, _ = _optimal_c_flagged(batch.rewards, pred_chosen)
    else:
        c_hat = 1.0
    _, direct_grads = _kernels.direct_stats(
        probs_flat, batch.offsets, pred_flat, batch.features_flat, policy.alpha
    )
    coef = (batch.rewards - c_hat * pred_chosen) * rho_bar
    residual_grad = (coef @ log_grads) / beta - float(coef.sum()) / beta * weighted_mean_grad
    direct_grad = c_hat * direct_grads.sum(axis=0) / beta
    return -(residual_grad + direct_grad)
