"""Reward and evaluation metrics.

Smoothed sentence-level n-gram precision scores serve as per-candidate
rewards; the corpus-level variant (pooled counts, single brevity penalty)
evaluates whole systems; approximate-randomization testing decides whether
two systems' corpus scores differ significantly.

All scores live in [0, 1]; the conventional x100 scale is applied only when
rendering reports.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ValidationError

SMOOTHINGS = ("nakov_add1", "none")

Tokens = Sequence[str]


@dataclass(frozen=True)
class BleuConfig:
    """Scoring knobs: highest n-gram order and smoothing variant.

    nakov_add1 smoothing adds 1 to the numerator and denominator of every
    precision of order >= 2 (order 1 stays unsmoothed, so sharing no
    unigram still scores 0) and adds 1 to the reference length inside the
    brevity penalty.
    """

    max_order: int = 4
    smoothing: str = "nakov_add1"

    def __post_init__(self):
        if self.max_order < 1:
            raise ValidationError(f"max_order must be >= 1, got {self.max_order}")
        if self.smoothing not in SMOOTHINGS:
            raise ValidationError(
                f"unknown smoothing {self.smoothing!r}; expected one of {SMOOTHINGS}"
            )


@dataclass
class BleuStats:
    """Per-segment (or pooled) n-gram match counts and lengths.

    Addition pools segments, so corpus scoring is a sum of per-segment
    stats followed by one score computation.
    """

    matches: np.ndarray
    totals: np.ndarray
    hyp_len: int
    ref_len: int

    @classmethod
    def zeros(cls, max_order: int = 4) -> "BleuStats":
        return cls(
            matches=np.zeros(max_order, dtype=np.int64),
            totals=np.zeros(max_order, dtype=np.int64),
            hyp_len=0,
            ref_len=0,
        )

    def __add__(self, other: "BleuStats") -> "BleuStats":
        if self.matches.shape != other.matches.shape:
            raise ValidationError("cannot pool stats with different max_order")
        return BleuStats(
            matches=self.matches + other.matches,
            totals=self.totals + other.totals,
            hyp_len=self.hyp_len + other.hyp_len,
            ref_len=self.ref_len + other.ref_len,
        )

    def __radd__(self, other):
        if other == 0:  # so sum() works
            return self
        return self.__add__(other)


def _ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def pair_stats(hypothesis: Tokens, reference: Tokens, max_order: int = 4) -> BleuStats:
    """Clipped n-gram matches and totals for one hypothesis/reference pair."""
    if len(reference) == 0:
        raise ValidationError("reference must be non-empty")
    matches = np.zeros(max_order, dtype=np.int64)
    totals = np.zeros(max_order, dtype=np.int64)
    for n in range(1, max_order + 1):
        total = max(0, len(hypothesis) - n + 1)
        totals[n - 1] = total
        if total == 0:
            continue
        hyp_counts = _ngram_counts(hypothesis, n)
        ref_counts = _ngram_counts(reference, n)
        matches[n - 1] = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return BleuStats(matches=matches, totals=totals, hyp_len=len(hypothesis), ref_len=len(reference))


def score_stats(stats: BleuStats, config: BleuConfig = BleuConfig()) -> float:
    """Score from (possibly pooled) stats: geometric mean of precisions x BP."""
    if stats.hyp_len == 0:
        return 0.0
    max_order = stats.matches.shape[0]
    if max_order < config.max_order:
        raise ValidationError("stats hold fewer orders than the config requests")
    log_prec_sum = 0.0
    for n in range(1, config.max_order + 1):
        m = int(stats.matches[n - 1])
        t = int(stats.totals[n - 1])
        if config.smoothing == "nakov_add1" and n >= 2:
            m += 1
            t += 1
        if m == 0 or t == 0:
            return 0.0
        log_prec_sum += np.log(m / t)
    ref_len = stats.ref_len + (1 if config.smoothing == "nakov_add1" else 0)
    log_bp = min(0.0, 1.0 - ref_len / stats.hyp_len)
    return float(np.exp(log_prec_sum / config.max_order + log_bp))


def sentence_bleu(hypothesis: Tokens, reference: Tokens, config: BleuConfig = BleuConfig()) -> float:
    """Smoothed per-segment score in [0, 1]; empty hypothesis scores 0."""
    if len(reference) == 0:
        raise ValidationError("reference must be non-empty")
    if len(hypothesis) == 0:
        return 0.0
    return score_stats(pair_stats(hypothesis, reference, config.max_order), config)


def corpus_bleu(
    pairs: Sequence[tuple[Tokens, Tokens]],
    config: BleuConfig = BleuConfig(smoothing="none"),
) -> float:
    """Corpus score: pooled n-gram counts, single brevity penalty."""
    if len(pairs) == 0:
        raise ValidationError("corpus must be non-empty")
    pooled = BleuStats.zeros(config.max_order)
    for hyp, ref in pairs:
        pooled = pooled + pair_stats(hyp, ref, config.max_order)
    return score_stats(pooled, config)


@dataclass(frozen=True)
class SignificanceResult:
    """Outcome of an approximate-randomization test."""

    p_value: float
    iterations: int
    observed_diff: float


def _stats_matrix(outputs: Sequence[Tokens], references: Sequence[Tokens], max_order: int):
    matches = np.zeros((len(outputs), max_order), dtype=np.int64)
    totals = np.zeros((len(outputs), max_order), dtype=np.int64)
    hyp_lens = np.zeros(len(outputs), dtype=np.int64)
    for i, (hyp, ref) in enumerate(zip(outputs, references)):
        st = pair_stats(hyp, ref, max_order)
        matches[i] = st.matches
        totals[i] = st.totals
        hyp_lens[i] = st.hyp_len
    return matches, totals, hyp_lens


def _scores_from_pooled(matches, totals, hyp_len, ref_len) -> np.ndarray:
    """Vectorized unsmoothed corpus score over rows of pooled counts."""
    matches = np.asarray(matches, dtype=np.float64)
    totals = np.asarray(totals, dtype=np.float64)
    hyp_len = np.asarray(hyp_len, dtype=np.float64)
    ok = np.all(matches > 0, axis=-1) & np.all(totals > 0, axis=-1) & (hyp_len > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_prec = np.where(ok[..., None], np.log(matches / totals), 0.0)
        log_bp = np.minimum(0.0, 1.0 - ref_len / np.where(hyp_len > 0, hyp_len, 1.0))
        score = np.exp(log_prec.mean(axis=-1) + log_bp)
    return np.where(ok, score, 0.0)


def ar_test(
    outputs_a: Sequence[Tokens],
    outputs_b: Sequence[Tokens],
    references: Sequence[Tokens],
    iterations: int = 10000,
    rng: np.random.Generator | None = None,
    config: BleuConfig = BleuConfig(smoothing="none"),
) -> SignificanceResult:
    """Paired approximate-randomization test on the corpus-score difference.

    Each iteration independently swaps each (a, b) segment pair with
    probability 1/2 and recomputes |score(A) - score(B)|;
    p = (count(shuffled >= observed) + 1) / (iterations + 1).
    """
    if not (len(outputs_a) == len(outputs_b) == len(references)):
        raise ValidationError(
            f"length mismatch: {len(outputs_a)} vs {len(outputs_b)} vs {len(references)} segments"
        )
    if len(references) == 0:
        raise ValidationError("corpus must be non-empty")
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)

    k = config.max_order
    ma, ta, ha = _stats_matrix(outputs_a, references, k)
    mb, tb, hb = _stats_matrix(outputs_b, references, k)
    ref_len = float(sum(len(r) for r in references))

    sum_a = (ma.sum(axis=0), ta.sum(axis=0), ha.sum())
    sum_b = (mb.sum(axis=0), tb.sum(axis=0), hb.sum())
    observed = abs(
        float(_scores_from_pooled(*sum_a, ref_len)) - float(_scores_from_pooled(*sum_b, ref_len))
    )

    dm, dt, dh = mb - ma, tb - ta, hb - ha  # swapping segment s moves these from B to A
    exceed = 0
    chunk = 512
    done = 0
    while done < iterations:
        r = min(chunk, iterations - done)
        mask = rng.random((r, len(references))) < 0.5
        maskf = mask.astype(np.float64)
        am = sum_a[0] + maskf @ dm
        at = sum_a[1] + maskf @ dt
        ah = sum_a[2] + maskf @ dh
        bm = sum_b[0] - maskf @ dm
        bt = sum_b[1] - maskf @ dt
        bh = sum_b[2] - maskf @ dh
        diffs = np.abs(
            _scores_from_pooled(am, at, ah, ref_len) - _scores_from_pooled(bm, bt, bh, ref_len)
        )
        exceed += int(np.count_nonzero(diffs >= observed))
        done += r
    p = (exceed + 1) / (iterations + 1)
    return SignificanceResult(p_value=float(p), iterations=iterations, observed_diff=observed)
