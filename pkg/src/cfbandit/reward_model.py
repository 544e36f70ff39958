"""Direct reward regression: predict a candidate's reward from its features.

Two model kinds share one interface:

  forest  bagged regression trees (bootstrap resamples, greedy
          variance-reduction splits over a random feature subset,
          leaf = mean of leaf samples)
  ridge   closed-form regularized least squares with an unregularized
          intercept — a transparent baseline whose predictions can be
          made analytically exact for identity checks

Predictions are always clamped to [0, 1], the reward range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, LogEntry, ValidationError, read_json, write_json

KINDS = ("forest", "ridge")


@dataclass(frozen=True)
class RewardModelConfig:
    kind: str = "forest"
    trees: int = 10
    max_depth: int = 12
    min_leaf: int = 5
    features_per_split: float = 1.0 / 3.0
    ridge_lambda: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.trees < 1:
            raise ValidationError("trees must be >= 1")
        if self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be >= 1")
        if not (0.0 < self.features_per_split <= 1.0):
            raise ValidationError("features_per_split must be in (0, 1]")
        if self.ridge_lambda < 0:
            raise ValidationError("lambda must be >= 0")


@dataclass
class Tree:
    """One regression tree in flat-array form.

    Row i is a node: feature[i] < 0 marks a leaf with prediction value[i];
    otherwise rows left[i]/right[i] are the children and samples go left
    when x[feature[i]] <= threshold[i].
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        feat = self.feature[node]
        active = feat >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = x[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            feat = self.feature[node]
            active = feat >= 0
        return self.value[node]


@dataclass
class RewardModel:
    kind: str
    trees: list[Tree] = field(default_factory=list)
    weights: Optional[np.ndarray] = None
    intercept: float = 0.0
    ridge_lambda: float = 0.0

    @property
    def dim(self) -> Optional[int]:
        if self.kind == "ridge":
            return None if self.weights is None else int(self.weights.shape[0])
        return None

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """Clamped predictions for a (n, d) feature matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValidationError("predict_batch expects a 2-d feature matrix")
        if self.kind == "ridge":
            if x.shape[1] != self.weights.shape[0]:
                raise ValidationError(
                    f"feature dimension {x.shape[1]} != model dimension {self.weights.shape[0]}"
                )
            raw = x @ self.weights + self.intercept
        else:
            acc = np.zeros(x.shape[0], dtype=np.float64)
            for tree in self.trees:
                acc += tree.predict_batch(x)
            raw = acc / len(self.trees)
        return np.clip(raw, 0.0, 1.0)

    def predict(self, features: np.ndarray) -> float:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 1:
            raise ValidationError("predict expects a flat feature vector")
        return float(self.predict_batch(features[None, :])[0])


@dataclass
class RewardModelReport:
    """Cross-validated error summary.

    macro: |mean(observed) - mean(predicted)| on held-out data — bias of
    the average.  micro: mean |observed - predicted| — expected error for
    a random sample.  Averaged across folds.
    """

    macro_avg: float
    micro_avg: float
    per_fold_macro: list[float]
    per_fold_micro: list[float]


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    feats, rewards = [], []
    for features, reward in data:
        feats.append(np.asarray(features, dtype=np.float64))
        rewards.append(float(reward))
    if not feats:
        raise ValidationError("training data must be non-empty")
    x = np.stack(feats)
    y = np.asarray(rewards, dtype=np.float64)
    if np.any((y < 0.0) | (y > 1.0)) or not np.all(np.isfinite(y)):
        raise ValidationError("rewards must lie in [0, 1]")
    return x, y


def pairs_from_log(entries: Sequence[LogEntry], dataset: Dataset) -> list[tuple[np.ndarray, float]]:
    """(logged-candidate features, observed reward) pairs for model fitting."""
    pairs = []
    for e in entries:
        inst = dataset[e.instance_id]
        pairs.append((inst.candidates[e.candidate_id].features, e.reward))
    return pairs


def _fit_ridge(x: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    yc = y - y_mean
    d = x.shape[1]
    gram = xc.T @ xc + lam * np.eye(d)
    try:
        w = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError:
        w = np.linalg.lstsq(gram, xc.T @ yc, rcond=None)[0]
    return w, float(y_mean - x_mean @ w)


def _best_split(x_col: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best threshold on one feature; returns (gain, threshold) or None."""
    n = y.shape[0]
    if n < 2 * min_leaf:
        return None
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    ys = y[order]
    csum = np.cumsum(ys)
    total = csum[-1]
    k = np.arange(min_leaf, n - min_leaf + 1)  # candidate left-side sizes
    boundary_ok = xs[k - 1] < xs[k]
    if not np.any(boundary_ok):
        return None
    left_sum = csum[k - 1]
    score = left_sum**2 / k + (total - left_sum) ** 2 / (n - k)
    score = np.where(boundary_ok, score, -np.inf)
    best = int(np.argmax(score))
    gain = float(score[best]) - total**2 / n
    if gain <= 0.0:
        return None
    kb = int(k[best])
    return gain, float((xs[kb - 1] + xs[kb]) / 2.0)


def _build_tree(
    x: np.ndarray, y: np.ndarray, config: RewardModelConfig, rng: np.random.Generator
) -> Tree:
    d = x.shape[1]
    n_feats = max(1, int(round(config.features_per_split * d)))
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf(idx) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return node

    def grow(idx: np.ndarray, depth: int) -> int:
        if depth >= config.max_depth or idx.shape[0] < 2 * config.min_leaf:
            return leaf(idx)
        candidates = rng.choice(d, size=n_feats, replace=False)
        best = None
        for f in candidates:
            found = _best_split(x[idx, f], y[idx], config.min_leaf)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], int(f), found[1])
        if best is None:
            return leaf(idx)
        _, f, thr = best
        go_left = x[idx, f] <= thr
        node = len(feature)
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(x.shape[0]), 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


def fit(config: RewardModelConfig, data) -> RewardModel:
    """Fit a reward model on (features, reward) pairs; deterministic given seed."""
    x, y = _as_arrays(data)
    if config.kind == "ridge":
        w, b = _fit_ridge(x, y, config.ridge_lambda)
        return RewardModel(kind="ridge", weights=w, intercept=b, ridge_lambda=config.ridge_lambda)
    seeds = np.random.SeedSequence(config.seed).spawn(config.trees)
    trees = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        boot = rng.integers(0, x.shape[0], size=x.shape[0])
        trees.append(_build_tree(x[boot], y[boot], config, rng))
    return RewardModel(kind="forest", trees=trees)


def cross_validate(
    config: RewardModelConfig, data, folds: int = 5, seed: int = 0
) -> RewardModelReport:
    """Seeded-shuffle k-fold errors of the model class on held-out data."""
    if folds < 2:
        raise ValidationError("cross-validation needs folds >= 2")
    x, y = _as_arrays(data)
    n = x.shape[0]
    if n < folds:
        raise ValidationError(f"need at least {folds} samples for {folds}-fold validation")
    order = np.random.default_rng(seed).permutation(n)
    macro, micro = [], []
    bounds = np.linspace(0, n, folds + 1).astype(np.int64)
    for i in range(folds):
        held = order[bounds[i] : bounds[i + 1]]
        rest = np.concatenate([order[: bounds[i]], order[bounds[i + 1] :]])
        model = fit(config, list(zip(x[rest], y[rest])))
        pred = model.predict_batch(x[held])
        macro.append(abs(float(y[held].mean()) - float(pred.mean())))
        micro.append(float(np.mean(np.abs(y[held] - pred))))
    return RewardModelReport(
        macro_avg=float(np.mean(macro)),
        micro_avg=float(np.mean(micro)),
        per_fold_macro=macro,
        per_fold_micro=micro,
    )


def save_model(model: RewardModel, path: str) -> None:
    if model.kind == "ridge":
        rec = {
            "kind": "ridge",
            "lambda": model.ridge_lambda,
            "intercept": model.intercept,
            "weights": model.weights,
        }
    else:
        rec = {
            "kind": "forest",
            "trees": [
                {
                    "feature": t.feature,
                    "threshold": t.threshold,
                    "left": t.left,
                    "right": t.right,
                    "value": t.value,
                }
                for t in model.trees
            ],
        }
    write_json(rec, path)


def load_model(path: str) -> RewardModel:
    rec = read_json(path)
    if rec["kind"] == "ridge":
        return RewardModel(
            kind="ridge",
            weights=np.asarray(rec["weights"], dtype=np.float64),
            intercept=float(rec["intercept"]),
            ridge_lambda=float(rec["lambda"]),
        )
    trees = [
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int64),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int64),
            right=np.asarray(t["right"], dtype=np.int64),
            value=np.asarray(t["value"], dtype=np.float64),
        )
        for t in rec["trees"]
    ]
    return RewardModel(kind="forest", trees=trees)
