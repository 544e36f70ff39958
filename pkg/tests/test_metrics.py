"""N-gram precision scoring and approximate-randomization significance.

Expected values are hand-counted: n-gram match/total tables worked out on
paper, then combined with the documented geometric-mean + brevity-penalty
formula.
"""

import math

import numpy as np
import pytest

from cfbandit.core import ValidationError
from cfbandit.metrics import (
    BleuConfig,
    BleuStats,
    ar_test,
    corpus_bleu,
    pair_stats,
    score_stats,
    sentence_bleu,
)


def toks(text):
    return tuple(text.split())


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


def test_pair_stats_clips_repeated_ngrams():
    # hyp: the cat the cat | ref: the cat sat
    # 1-grams: "the"x2 clipped to 1, "cat"x2 clipped to 1 -> 2 of 4
    # 2-grams: (the,cat)x2 clipped to 1, (cat,the) unmatched -> 1 of 3
    st = pair_stats(toks("the cat the cat"), toks("the cat sat"))
    assert st.matches.tolist() == [2, 1, 0, 0]
    assert st.totals.tolist() == [4, 3, 2, 1]
    assert st.hyp_len == 4
    assert st.ref_len == 3


def test_pair_stats_short_hypothesis_has_zero_high_order_totals():
    st = pair_stats(toks("a b"), toks("a b c"))
    assert st.totals.tolist() == [2, 1, 0, 0]
    assert st.matches.tolist() == [2, 1, 0, 0]


def test_pair_stats_rejects_empty_reference():
    with pytest.raises(ValidationError):
        pair_stats(toks("a"), ())


def test_stats_pool_by_addition():
    a = pair_stats(toks("a b c d"), toks("a b c d"))
    b = pair_stats(toks("a b"), toks("a b c"))
    pooled = a + b
    assert pooled.matches.tolist() == [6, 4, 2, 1]
    assert pooled.totals.tolist() == [6, 4, 2, 1]
    assert pooled.hyp_len == 6
    assert pooled.ref_len == 7
    assert sum([a, b]).matches.tolist() == pooled.matches.tolist()


def test_stats_with_different_orders_cannot_pool():
    a = pair_stats(toks("a b"), toks("a b"), max_order=2)
    b = pair_stats(toks("a b"), toks("a b"), max_order=4)
    with pytest.raises(ValidationError):
        a + b


# ---------------------------------------------------------------------------
# Sentence scores (hand-derived)
# ---------------------------------------------------------------------------


def test_identity_sentence_score_with_add_one_smoothing():
    # All smoothed precisions are 1; the +1 on the reference length makes
    # the brevity penalty exp(1 - 5/4) = exp(-1/4).
    score = sentence_bleu(toks("a b c d"), toks("a b c d"))
    assert score == pytest.approx(math.exp(-0.25), abs=1e-12)


def test_one_substitution_sentence_score_is_exact():
    # hyp: a b x d | ref: a b c d
    # p1 = 3/4; smoothed p2 = (1+1)/(3+1), p3 = (0+1)/(2+1), p4 = (0+1)/(1+1)
    # product = 1/16 -> geometric mean 1/2; BP = exp(1 - 5/4)
    score = sentence_bleu(toks("a b x d"), toks("a b c d"))
    assert score == pytest.approx(0.5 * math.exp(-0.25), abs=1e-12)


def test_no_unigram_overlap_scores_zero_even_smoothed():
    assert sentence_bleu(toks("x y z w"), toks("a b c d")) == 0.0


def test_empty_hypothesis_scores_zero():
    assert sentence_bleu((), toks("a b")) == 0.0


def test_long_hypothesis_has_no_brevity_penalty():
    # hyp: a b c d e (len 5) vs ref: a b c d -> smoothed ref len 5, BP = 1
    # p1 = 4/5, p2 = (3+1)/(4+1), p3 = (2+1)/(3+1), p4 = (1+1)/(2+1)
    expected = (4 / 5 * 4 / 5 * 3 / 4 * 2 / 3) ** 0.25
    score = sentence_bleu(toks("a b c d e"), toks("a b c d"))
    assert score == pytest.approx(expected, abs=1e-12)


def test_unsmoothed_identity_is_one_and_zero_matches_score_zero():
    none = BleuConfig(smoothing="none")
    assert sentence_bleu(toks("a b c d"), toks("a b c d"), none) == 1.0
    # No 4-gram exists for a 3-token hypothesis -> zero total -> 0
    assert sentence_bleu(toks("a b c"), toks("a b c"), none) == 0.0
    # Unigram-only overlap -> a zero match among orders -> 0
    assert sentence_bleu(toks("a x b y"), toks("a b c d"), none) == 0.0


def test_scores_stay_in_unit_interval_and_reward_better_matches():
    ref = toks("the quick brown fox jumps over the lazy dog today")
    close = sentence_bleu(toks("the quick brown fox jumps over a lazy dog today"), ref)
    far = sentence_bleu(toks("the dog sleeps all day long under a tree now"), ref)
    assert 0.0 <= far < close <= 1.0


def test_max_order_config_is_respected():
    cfg = BleuConfig(max_order=2, smoothing="none")
    # p1 = 1, p2 = 1 on an identity pair of length 2
    assert sentence_bleu(toks("a b"), toks("a b"), cfg) == 1.0
    with pytest.raises(ValidationError):
        BleuConfig(max_order=0)
    with pytest.raises(ValidationError):
        BleuConfig(smoothing="laplace")


def test_score_stats_rejects_narrower_stats_than_config():
    st = pair_stats(toks("a b"), toks("a b"), max_order=2)
    with pytest.raises(ValidationError):
        score_stats(st, BleuConfig(max_order=4))


# ---------------------------------------------------------------------------
# Corpus scores
# ---------------------------------------------------------------------------


def test_corpus_score_pools_counts_before_scoring():
    # Pooled: matches = totals = (6, 4, 2, 1), hyp 6, ref 7
    # precisions all 1, single BP = exp(1 - 7/6)
    pairs = [
        (toks("a b c d"), toks("a b c d")),
        (toks("a b"), toks("a b c")),
    ]
    assert corpus_bleu(pairs) == pytest.approx(math.exp(-1 / 6), abs=1e-12)


def test_corpus_differs_from_average_of_sentence_scores():
    # Pooled: matches (6, 4, 2, 1) of totals (8, 6, 4, 2); BP = 1.
    # Geometric mean = (3/4 * 2/3 * 1/2 * 1/2)^(1/4) = 2^(-3/4),
    # while the sentence scores average to (1.0 + 0.0) / 2 = 0.5.
    pairs = [
        (toks("a b c d"), toks("a b c d")),
        (toks("a b x y"), toks("a b c d")),
    ]
    none = BleuConfig(smoothing="none")
    mean_sentences = sum(sentence_bleu(h, r, none) for h, r in pairs) / 2
    assert mean_sentences == 0.5
    assert corpus_bleu(pairs) == pytest.approx(2.0 ** -0.75, abs=1e-12)
    assert corpus_bleu(pairs) != pytest.approx(mean_sentences, abs=1e-3)


def test_single_pair_corpus_equals_unsmoothed_sentence():
    rng = np.random.default_rng(8)
    vocab = [f"w{i}" for i in range(12)]
    none = BleuConfig(smoothing="none")
    for _ in range(25):
        ref = tuple(rng.choice(vocab, size=rng.integers(4, 10)))
        hyp = tuple(rng.choice(vocab, size=rng.integers(4, 10)))
        assert corpus_bleu([(hyp, ref)]) == pytest.approx(
            sentence_bleu(hyp, ref, none), abs=1e-15
        )


def test_corpus_requires_pairs():
    with pytest.raises(ValidationError):
        corpus_bleu([])


# ---------------------------------------------------------------------------
# Approximate randomization
# ---------------------------------------------------------------------------


def make_corpus(rng, n=30):
    vocab = [f"w{i}" for i in range(20)]
    refs = [tuple(rng.choice(vocab, size=8)) for _ in range(n)]
    return refs


def corrupt(ref, k, rng, vocab):
    out = list(ref)
    for pos in rng.choice(len(out), size=k, replace=False):
        out[pos] = str(rng.choice(vocab))
    return tuple(out)


def test_identical_systems_are_never_significant():
    rng = np.random.default_rng(2)
    refs = make_corpus(rng)
    outs = [corrupt(r, 2, rng, [f"w{i}" for i in range(20)]) for r in refs]
    result = ar_test(outs, [tuple(o) for o in outs], refs, iterations=200, rng=rng)
    assert result.observed_diff == 0.0
    assert result.p_value == 1.0
    assert result.iterations == 200


def test_clearly_better_system_gets_small_p_value():
    rng = np.random.default_rng(3)
    vocab = [f"w{i}" for i in range(20)]
    refs = make_corpus(rng, n=40)
    good = [corrupt(r, 1, rng, vocab) for r in refs]
    bad = [corrupt(r, 5, rng, vocab) for r in refs]
    result = ar_test(good, bad, refs, iterations=500, rng=np.random.default_rng(0))
    assert result.observed_diff > 0.05
    assert result.p_value <= 0.05
    assert result.p_value >= 1 / 501  # the +1 correction bounds p away from 0


def test_ar_test_is_deterministic_given_seed():
    rng = np.random.default_rng(4)
    vocab = [f"w{i}" for i in range(20)]
    refs = make_corpus(rng, n=25)
    a = [corrupt(r, 2, rng, vocab) for r in refs]
    b = [corrupt(r, 3, rng, vocab) for r in refs]
    r1 = ar_test(a, b, refs, iterations=300, rng=np.random.default_rng(7))
    r2 = ar_test(a, b, refs, iterations=300, rng=np.random.default_rng(7))
    assert r1 == r2


def test_ar_test_is_symmetric_in_the_two_systems():
    rng = np.random.default_rng(5)
    vocab = [f"w{i}" for i in range(20)]
    refs = make_corpus(rng, n=25)
    a = [corrupt(r, 2, rng, vocab) for r in refs]
    b = [corrupt(r, 3, rng, vocab) for r in refs]
    r_ab = ar_test(a, b, refs, iterations=400, rng=np.random.default_rng(9))
    r_ba = ar_test(b, a, refs, iterations=400, rng=np.random.default_rng(9))
    assert r_ab.observed_diff == pytest.approx(r_ba.observed_diff, abs=1e-15)
    assert r_ab.p_value == r_ba.p_value


def test_ar_test_validates_inputs():
    refs = [toks("a b c d")]
    with pytest.raises(ValidationError):
        ar_test([toks("a b")], [], refs)
    with pytest.raises(ValidationError):
        ar_test([], [], [])
    with pytest.raises(ValidationError):
        ar_test([toks("a b")], [toks("a c")], refs, iterations=0)
