"""Folded counterfactual evaluation against enumerated ground truth."""

import warnings
from decimal import Decimal

import numpy as np
import pytest

from cfbandit.core import Candidate, Dataset, Instance, ValidationError
from cfbandit.estimators import DegenerateBatchError
from cfbandit.evaluator import (
    EvalConfig,
    evaluate_policy,
    render_report,
    round_half_away,
)
from cfbandit.policy import GibbsPolicy
from cfbandit.reward_model import RewardModelConfig, fit, pairs_from_log
from cfbandit.sim import TaskConfig, generate_task, ground_truth, simulate_log

TASK = TaskConfig(
    num_train=60,
    num_validation=20,
    num_test=10,
    num_candidates=5,
    feature_dim=8,
    vocab_size=30,
    ref_len_min=5,
    ref_len_max=8,
    seed=2,
)


@pytest.fixture(scope="module")
def setup():
    dataset, oracle, logging_w = generate_task(TASK)
    logging_policy = GibbsPolicy(logging_w, alpha=TASK.alpha, nbest_cap=TASK.nbest_cap)
    target_policy = GibbsPolicy(oracle, alpha=TASK.alpha, nbest_cap=TASK.nbest_cap)
    log = simulate_log(logging_policy, dataset, "stochastic", np.random.default_rng(1))
    model = fit(RewardModelConfig(kind="ridge"), pairs_from_log(log, dataset))
    return dataset, logging_policy, target_policy, model


def test_config_validation():
    with pytest.raises(ValidationError):
        EvalConfig(folds=0)
    with pytest.raises(ValidationError):
        EvalConfig(eval_log_size=0)
    with pytest.raises(ValidationError):
        EvalConfig(estimators=("snips",))
    with pytest.raises(ValidationError):
        EvalConfig(estimators=())


def test_report_structure_and_summary_math(setup):
    dataset, logging_policy, target_policy, model = setup
    config = EvalConfig(folds=4, eval_log_size=1000, seed=0)
    report = evaluate_policy(target_policy, logging_policy, dataset, model, config)
    assert report.folds == 4
    assert report.split == "train"
    assert report.log_size == 60  # capped at the split size
    truth = ground_truth(target_policy, dataset, "train")
    assert report.truth.expected_reward == pytest.approx(truth.expected_reward, abs=1e-15)
    assert [s.kind for s in report.estimators] == ["dpm_r", "dc", "chat_dc"]
    assert [s.name for s in report.estimators] == ["IPS+R", "DR", "cDR"]
    for s in report.estimators:
        assert len(s.per_fold) == 4
        assert s.folds_used == 4
        vals = np.array([v for v in s.per_fold if v is not None])
        assert s.avg_diff == pytest.approx(
            float((vals.mean() - truth.expected_reward) * 100), abs=1e-12
        )
        assert s.std_dev == pytest.approx(float(vals.std() * 100), abs=1e-12)
        assert all(0.0 <= v <= 1.5 for v in vals)


def test_evaluation_is_deterministic(setup):
    dataset, logging_policy, target_policy, model = setup
    config = EvalConfig(folds=3, eval_log_size=40, seed=11)
    r1 = evaluate_policy(target_policy, logging_policy, dataset, model, config)
    r2 = evaluate_policy(target_policy, logging_policy, dataset, model, config)
    for a, b in zip(r1.estimators, r2.estimators):
        assert a == b
    r3 = evaluate_policy(
        target_policy, logging_policy, dataset, model, EvalConfig(folds=3, eval_log_size=40, seed=12)
    )
    assert any(a != b for a, b in zip(r1.estimators, r3.estimators))


def test_subsampled_folds_use_the_requested_log_size(setup):
    dataset, logging_policy, target_policy, model = setup
    config = EvalConfig(folds=2, eval_log_size=25, seed=3)
    report = evaluate_policy(target_policy, logging_policy, dataset, model, config)
    assert report.log_size == 25


def test_model_free_estimators_run_without_a_model(setup):
    dataset, logging_policy, target_policy, _ = setup
    config = EvalConfig(folds=2, estimators=("dpm_r", "ips"), seed=0)
    report = evaluate_policy(target_policy, logging_policy, dataset, None, config)
    assert [s.kind for s in report.estimators] == ["dpm_r", "ips"]


def test_model_backed_estimators_require_a_model(setup):
    dataset, logging_policy, target_policy, _ = setup
    with pytest.raises(ValidationError):
        evaluate_policy(target_policy, logging_policy, dataset, None, EvalConfig(folds=2))


def tiny_one_hot_dataset(n=3):
    eye = np.eye(2)
    instances = [
        Instance(
            id=i,
            candidates=tuple(
                Candidate(id=k, tokens=("hit",) if k == 0 else ("miss",), features=eye[k])
                for k in range(2)
            ),
            reference=("hit", "hit", "hit", "hit"),
            split="train",
        )
        for i in range(n)
    ]
    return Dataset(instances)


def test_degenerate_folds_are_warned_and_excluded():
    # Uniform logging; the capped target puts all mass on candidate 0, so a
    # fold where sampling only ever picks candidate 1 cannot be reweighted.
    ds = tiny_one_hot_dataset(3)
    logging_policy = GibbsPolicy(np.zeros(2), alpha=1.0)
    target = GibbsPolicy(np.array([1.0, 0.0]), alpha=1.0, nbest_cap=1)
    config = EvalConfig(folds=40, estimators=("dpm_r",), seed=0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = evaluate_policy(target, logging_policy, ds, None, config)
    summary = report.estimators[0]
    assert summary.folds_used < 40
    assert summary.per_fold.count(None) == 40 - summary.folds_used
    assert any("degenerate" in str(w.message) for w in caught)


def test_all_degenerate_folds_raise():
    ds = tiny_one_hot_dataset(3)
    # Logging can only ever produce candidate 1; the target only accepts 0.
    logging_policy = GibbsPolicy(np.array([0.0, 1.0]), alpha=1.0, nbest_cap=1)
    target = GibbsPolicy(np.array([1.0, 0.0]), alpha=1.0, nbest_cap=1)
    config = EvalConfig(folds=3, estimators=("dpm_r",), seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DegenerateBatchError):
            evaluate_policy(target, logging_policy, ds, None, config)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def test_rounding_ties_go_away_from_zero():
    assert round_half_away(0.005) == Decimal("0.01")
    assert round_half_away(-0.005) == Decimal("-0.01")
    assert round_half_away(2.675) == Decimal("2.68")
    assert round_half_away(0.125) == Decimal("0.13")
    assert round_half_away(1.0049) == Decimal("1.00")
    assert round_half_away(1.5, places=0) == Decimal("2")
    assert round_half_away(-1.5, places=0) == Decimal("-2")


def test_render_report_produces_records_and_a_table(setup):
    dataset, logging_policy, target_policy, model = setup
    config = EvalConfig(folds=3, seed=0)
    report = evaluate_policy(target_policy, logging_policy, dataset, model, config)
    records, text = render_report(report)
    assert records["folds"] == 3
    assert records["split"] == "train"
    assert len(records["estimators"]) == 3
    for entry in records["estimators"]:
        assert set(entry) == {
            "kind",
            "name",
            "avg_estimate_minus_truth_x100",
            "std_dev_x100",
            "folds_used",
            "per_fold_estimates",
        }
    lines = text.splitlines()
    assert "ground truth expected reward" in lines[0]
    assert "estimator" in lines[1]
    assert len(lines) == 2 + 3
    for s, line in zip(report.estimators, lines[2:]):
        assert line.startswith(s.name)
        assert ("+" in line) or ("-" in line)  # signed avg column
