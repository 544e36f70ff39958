"""Linear Gibbs policy over candidate sets.

Scores are w.features; the policy distribution is a temperature-scaled
softmax computed in log space.  With an n-best cap only the cap
highest-scoring candidates (ties to lower id) receive mass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import Instance, ValidationError, read_json, write_json


@dataclass(frozen=True)
class GibbsPolicy:
    """Softmax policy with weights w, temperature alpha, optional n-best cap."""

    weights: np.ndarray
    alpha: float = 1.0
    nbest_cap: Optional[int] = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValidationError("policy weights must be a flat vector")
        if not np.all(np.isfinite(w)):
            raise ValidationError("policy weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "alpha", float(self.alpha))
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if self.nbest_cap is not None:
            object.__setattr__(self, "nbest_cap", int(self.nbest_cap))
            if self.nbest_cap < 1:
                raise ValidationError(f"nbest_cap must be >= 1, got {self.nbest_cap}")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def with_weights(self, weights: np.ndarray) -> "GibbsPolicy":
        return replace(self, weights=weights)

    def _cap(self) -> int:
        return 0 if self.nbest_cap is None else self.nbest_cap

    def scores(self, instance: Instance) -> np.ndarray:
        if instance.feature_dim != self.dim:
            raise ValidationError(
                f"instance {instance.id}: feature dim {instance.feature_dim} != policy dim {self.dim}"
            )
        s = instance.feature_matrix @ self.weights
        if not np.all(np.isfinite(s)):
            raise ValidationError(f"instance {instance.id}: non-finite candidate score")
        return s

    def probabilities(self, instance: Instance) -> np.ndarray:
        """Distribution over the instance's candidates (sums to 1)."""
        s = self.scores(instance)
        offsets = np.array([0, len(s)], dtype=np.int64)
        return _kernels.batch_gibbs(s, offsets, self.alpha, self._cap())

    def argmax(self, instance: Instance) -> int:
        """Highest-scoring candidate id; ties broken by lowest id."""
        return int(np.argmax(self.scores(instance)))

    def sample(self, instance: Instance, rng: np.random.Generator) -> tuple[int, float]:
        """Draw a candidate; returns (candidate_id, its probability)."""
        probs = self.probabilities(instance)
        idx = sample_index(probs, rng.random())
        return idx, float(probs[idx])

    def grad_log_prob(self, instance: Instance, candidate_id: int) -> np.ndarray:
        """Gradient of log prob of the given candidate w.r.t. the weights.

        Equals alpha*(features[candidate] - E[features]) where the
        expectation is under this policy (cap masking included).  For a
        masked-out candidate this is the unmasked-form expression; its
        probability is exactly 0, so weighted uses vanish downstream.
        """
        if not (0 <= candidate_id < instance.num_candidates):
            raise ValidationError(
                f"instance {instance.id}: candidate {candidate_id} out of range"
            )
        s = self.scores(instance)
        offsets = np.array([0, len(s)], dtype=np.int64)
        probs = _kernels.batch_gibbs(s, offsets, self.alpha, self._cap())
        chosen = np.array([candidate_id], dtype=np.int64)
        _, grad = _kernels.chosen_stats(
            probs, offsets, chosen, instance.feature_matrix, self.alpha
        )
        return grad[0]


def sample_index(probs: np.ndarray, u: float) -> int:
    """Index drawn by inverting the CDF of a probability vector at u."""
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    idx = min(idx, len(probs) - 1)
    while probs[idx] == 0.0 and idx > 0:  # guard against landing on a masked tail
        idx -= 1
    return idx


def flatten_instances(instances: Sequence[Instance]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate candidate features for batched kernels.

    Returns (offsets, features_flat): instance t's candidates occupy rows
    offsets[t]:offsets[t+1] of the feature matrix.
    """
    if len(instances) == 0:
        raise ValidationError("cannot flatten an empty instance list")
    sizes = np.array([inst.num_candidates for inst in instances], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
    features = np.ascontiguousarray(
        np.concatenate([inst.feature_matrix for inst in instances], axis=0)
    )
    return offsets, features


def batch_probabilities(
    policy: GibbsPolicy, offsets: np.ndarray, features_flat: np.ndarray
) -> np.ndarray:
    """Candidate probabilities for many instances in flat layout."""
    if features_flat.shape[1] != policy.dim:
        raise ValidationError(
            f"feature dim {features_flat.shape[1]} != policy dim {policy.dim}"
        )
    scores = features_flat @ policy.weights
    if not np.all(np.isfinite(scores)):
        raise ValidationError("non-finite candidate score")
    return _kernels.batch_gibbs(scores, offsets, policy.alpha, policy._cap())


def save_policy(policy: GibbsPolicy, path: str) -> None:
    rec: dict = {"alpha": policy.alpha}
    if policy.nbest_cap is not None:
        rec["nbest_cap"] = policy.nbest_cap
    rec["weights"] = policy.weights
    write_json(rec, path)


def load_policy(path: str) -> GibbsPolicy:
    rec = read_json(path)
    try:
        return GibbsPolicy(
            weights=np.asarray(rec["weights"], dtype=np.float64),
            alpha=rec["alpha"],
            nbest_cap=rec.get("nbest_cap"),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed policy checkpoint {path}: {exc!r}") from exc
