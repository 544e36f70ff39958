"""Synthetic structured-prediction tasks with enumerable ground truth.

Each instance hides a reference token sequence; its candidates are
corruptions of the reference at spread-out noise levels, so candidate
quality varies within every instance.  Features mix quality-correlated
signals (n-gram overlap with a *noisy proxy* of the reference — the
policy never sees the reference itself — plus length statistics) with
pure-noise dimensions, so a linear policy can order candidates well but
not perfectly.

An oracle weight vector is fit to favor high-reward candidates; the
logging ("out-of-domain") weights are a Gaussian perturbation of the
oracle.  Because candidate sets are small and closed, every policy's
expected reward is computed exactly by enumeration — no Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import Candidate, Dataset, Instance, LogEntry, ValidationError
from .metrics import BleuConfig, corpus_bleu, pair_stats, sentence_bleu
from .policy import GibbsPolicy, batch_probabilities, flatten_instances, sample_index
from .reward_model import _fit_ridge

NUM_QUALITY_FEATURES = 6


@dataclass(frozen=True)
class TaskConfig:
    num_train: int = 5000
    num_validation: int = 1000
    num_test: int = 1000
    num_candidates: int = 20
    feature_dim: int = 16
    vocab_size: int = 50
    ref_len_min: int = 8
    ref_len_max: int = 16
    noise_min: float = 0.05
    noise_max: float = 0.7
    proxy_noise: float = 0.15
    oracle_weight_scale: float = 8.0
    logging_weight_perturbation: float = 0.6
    alpha: float = 5.0
    nbest_cap: Optional[int] = 1000
    min_margin: float = 0.05
    max_attempts: int = 25
    seed: int = 0

    def __post_init__(self):
        for name in ("num_train", "num_validation", "num_test", "num_candidates",
                     "feature_dim", "vocab_size", "ref_len_min", "ref_len_max"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.ref_len_min > self.ref_len_max:
            raise ValidationError("ref_len_min must be <= ref_len_max")
        if not (0.0 <= self.noise_min <= self.noise_max <= 1.0):
            raise ValidationError("need 0 <= noise_min <= noise_max <= 1")
        if not (0.0 <= self.proxy_noise <= 1.0):
            raise ValidationError("proxy_noise must be in [0, 1]")
        if self.oracle_weight_scale <= 0:
            raise ValidationError("oracle_weight_scale must be positive")
        if self.logging_weight_perturbation < 0:
            raise ValidationError("logging_weight_perturbation must be >= 0")
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if self.min_margin < 0:
            raise ValidationError("min_margin must be >= 0")
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")


@dataclass(frozen=True)
class GroundTruth:
    """Exact quality of a policy on a split: enumerated expected reward and
    the corpus score of its one-best outputs."""

    expected_reward: float
    onebest_corpus_bleu: float


def _token(i: int) -> str:
    return f"w{i}"


def _corrupt(tokens: Sequence[str], noise: float, rng: np.random.Generator, vocab_size: int) -> tuple[str, ...]:
    """Randomly substitute/delete/insert at the given per-token rate."""
    out: list[str] = []
    for tok in tokens:
        if rng.random() < noise:
            op = int(rng.integers(3))
            if op == 0:  # substitute
                out.append(_token(int(rng.integers(vocab_size))))
            elif op == 1:  # delete
                pass
            else:  # insert before
                out.append(_token(int(rng.integers(vocab_size))))
                out.append(tok)
        else:
            out.append(tok)
    if not out:
        out.append(_token(int(rng.integers(vocab_size))))
    return tuple(out)


def _quality_features(cand: Sequence[str], proxy: Sequence[str], n: int) -> np.ndarray:
    st = pair_stats(cand, proxy, max_order=2)
    m1, m2 = int(st.matches[0]), int(st.matches[1])
    t1, t2 = int(st.totals[0]), int(st.totals[1])
    plen = len(proxy)
    feats = np.array(
        [
            sentence_bleu(cand, proxy),
            m1 / max(t1, 1),
            m2 / max(t2, 1),
            m2 / max(plen - 1, 1),
            min(len(cand) / plen, 2.0),
            min(abs(len(cand) - plen) / plen, 1.5),
        ],
        dtype=np.float64,
    )
    return feats[:n]


def _make_instance(
    inst_id: int, split: str, config: TaskConfig, rng: np.random.Generator
) -> Instance:
    ref_len = int(rng.integers(config.ref_len_min, config.ref_len_max + 1))
    reference = tuple(_token(int(t)) for t in rng.integers(config.vocab_size, size=ref_len))
    proxy = _corrupt(reference, config.proxy_noise, rng, config.vocab_size)
    k = config.num_candidates
    levels = np.linspace(config.noise_min, config.noise_max, k)[rng.permutation(k)]
    n_quality = min(NUM_QUALITY_FEATURES, config.feature_dim)
    n_noise = config.feature_dim - n_quality
    candidates = []
    for j in range(k):
        tokens = _corrupt(reference, float(levels[j]), rng, config.vocab_size)
        quality = _quality_features(tokens, proxy, n_quality)
        features = np.concatenate([quality, rng.normal(0.0, 1.0, size=n_noise)])
        candidates.append(Candidate(id=j, tokens=tokens, features=features))
    return Instance(id=inst_id, candidates=tuple(candidates), reference=reference, split=split)


def candidate_reward_table(
    dataset: Dataset, config: BleuConfig = BleuConfig()
) -> dict[int, np.ndarray]:
    """Per-candidate sentence-level rewards for every instance with a reference."""
    table: dict[int, np.ndarray] = {}
    for inst in dataset:
        if inst.reference is None:
            continue
        table[inst.id] = np.array(
            [sentence_bleu(c.tokens, inst.reference, config) for c in inst.candidates],
            dtype=np.float64,
        )
    return table


def _split_sorted(dataset: Dataset, split: str) -> list[Instance]:
    instances = sorted(dataset.split(split), key=lambda inst: inst.id)
    if not instances:
        raise ValidationError(f"dataset has no instances in split {split!r}")
    return instances


def _rewards_flat(instances: Sequence[Instance], table: dict[int, np.ndarray]) -> np.ndarray:
    rows = []
    for inst in instances:
        if inst.id not in table:
            raise ValidationError(f"instance {inst.id} has no reference")
        rows.append(table[inst.id])
    return np.concatenate(rows)


def ground_truth(
    policy: GibbsPolicy,
    dataset: Dataset,
    split: str = "validation",
    *,
    reward_table: Optional[dict[int, np.ndarray]] = None,
) -> GroundTruth:
    """Exact expected reward (full enumeration) and one-best corpus score."""
    instances = _split_sorted(dataset, split)
    table = reward_table if reward_table is not None else candidate_reward_table(dataset)
    offsets, feats = flatten_instances(instances)
    probs = batch_probabilities(policy, offsets, feats)
    rewards = _rewards_flat(instances, table)
    per_instance = np.add.reduceat(probs * rewards, offsets[:-1])
    scores = feats @ policy.weights
    best = _kernels.segment_argmax(scores, offsets)
    pairs = [
        (inst.candidates[int(best[t])].tokens, inst.reference)
        for t, inst in enumerate(instances)
    ]
    return GroundTruth(
        expected_reward=float(np.mean(per_instance)),
        onebest_corpus_bleu=corpus_bleu(pairs, BleuConfig(smoothing="none")),
    )


def simulate_log(
    policy: GibbsPolicy,
    dataset: Dataset,
    mode: str,
    rng: Optional[np.random.Generator] = None,
    *,
    instances: Optional[Sequence[Instance]] = None,
    reward_table: Optional[dict[int, np.ndarray]] = None,
) -> list[LogEntry]:
    """One logged interaction per instance, in instance-id order.

    deterministic: the policy's argmax with propensity exactly 1;
    stochastic: a sampled candidate with its probability recorded.
    The logged reward is the candidate's sentence-level score against
    the instance's reference.
    """
    if mode not in ("deterministic", "stochastic"):
        raise ValidationError(f"unknown mode {mode!r}")
    if mode == "stochastic" and rng is None:
        raise ValidationError("stochastic logging requires an rng")
    if instances is None:
        instances = _split_sorted(dataset, "train")
    else:
        instances = sorted(instances, key=lambda inst: inst.id)
        if not instances:
            raise ValidationError("cannot log over an empty instance list")
    table = reward_table if reward_table is not None else candidate_reward_table(dataset)
    offsets, feats = flatten_instances(instances)
    entries = []
    if mode == "deterministic":
        scores = feats @ policy.weights
        if not np.all(np.isfinite(scores)):
            raise ValidationError("non-finite candidate score")
        best = _kernels.segment_argmax(scores, offsets)
        for t, inst in enumerate(instances):
            if inst.id not in table:
                raise ValidationError(f"instance {inst.id} has no reference")
            idx = int(best[t])
            entries.append(
                LogEntry(
                    instance_id=inst.id,
                    candidate_id=idx,
                    reward=float(table[inst.id][idx]),
                    propensity=1.0,
                    mode="deterministic",
                )
            )
    else:
        probs = batch_probabilities(policy, offsets, feats)
        for t, inst in enumerate(instances):
            if inst.id not in table:
                raise ValidationError(f"instance {inst.id} has no reference")
            p = probs[offsets[t] : offsets[t + 1]]
            idx = sample_index(p, rng.random())
            entries.append(
                LogEntry(
                    instance_id=inst.id,
                    candidate_id=idx,
                    reward=float(table[inst.id][idx]),
                    propensity=float(p[idx]),
                    mode="stochastic",
                )
            )
    return entries


def _fit_oracle_weights(
    instances: Sequence[Instance], table: dict[int, np.ndarray], scale: float
) -> np.ndarray:
    x = np.concatenate([inst.feature_matrix for inst in instances], axis=0)
    y = np.concatenate([table[inst.id] for inst in instances])
    w, _ = _fit_ridge(x, y, 1e-3)
    return w * scale


def generate_task(config: TaskConfig) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Build a task: dataset plus oracle and logging weight vectors.

    Retries with derived seeds until the oracle policy beats the logging
    policy by min_margin in exact expected reward on both the train and
    validation splits (skipped when the perturbation is 0, the margin is
    0, or K = 1, where no gap is possible).  Deterministic given the
    config.
    """
    check_margin = (
        config.min_margin > 0
        and config.logging_weight_perturbation > 0
        and config.num_candidates > 1
    )
    attempts = np.random.SeedSequence(config.seed).spawn(config.max_attempts)
    last_margin = -math.inf
    for attempt_seq in attempts:
        rng = np.random.default_rng(attempt_seq)
        instances = []
        counts = (
            ("train", config.num_train),
            ("validation", config.num_validation),
            ("test", config.num_test),
        )
        next_id = 0
        for split, count in counts:
            for _ in range(count):
                instances.append(_make_instance(next_id, split, config, rng))
                next_id += 1
        dataset = Dataset(instances)
        table = candidate_reward_table(dataset)
        oracle = _fit_oracle_weights(dataset.split("train"), table, config.oracle_weight_scale)
        logging_w = oracle + rng.normal(0.0, config.logging_weight_perturbation, size=oracle.shape)
        if not check_margin:
            return dataset, oracle, logging_w
        pol_oracle = GibbsPolicy(oracle, alpha=config.alpha, nbest_cap=config.nbest_cap)
        pol_logging = GibbsPolicy(logging_w, alpha=config.alpha, nbest_cap=config.nbest_cap)
        margins = []
        for split in ("train", "validation"):
            go = ground_truth(pol_oracle, dataset, split, reward_table=table)
            gl = ground_truth(pol_logging, dataset, split, reward_table=table)
            margins.append(go.expected_reward - gl.expected_reward)
        last_margin = min(margins)
        if last_margin >= config.min_margin:
            return dataset, oracle, logging_w
    raise ValidationError(
        f"could not generate a task with margin >= {config.min_margin} "
        f"in {config.max_attempts} attempts (best margin {last_margin:.4f}); "
        "lower min_margin or raise logging_weight_perturbation"
    )
