"""Data model validation and canonical serialization round trips."""

import math

import numpy as np
import pytest

from cfbandit.core import (
    Candidate,
    Dataset,
    Instance,
    LogEntry,
    ParseError,
    ValidationError,
    canonical_json,
    format_float,
    read_dataset,
    read_json,
    read_log,
    write_dataset,
    write_json,
    write_log,
)


def make_instance(inst_id, num_candidates=3, dim=4, split="train", reference=("a", "b"), seed=0):
    rng = np.random.default_rng(seed + inst_id)
    candidates = tuple(
        Candidate(id=k, tokens=(f"t{inst_id}", f"c{k}"), features=rng.normal(size=dim))
        for k in range(num_candidates)
    )
    return Instance(id=inst_id, candidates=candidates, reference=reference, split=split)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def test_candidate_rejects_empty_tokens():
    with pytest.raises(ValidationError):
        Candidate(id=0, tokens=(), features=np.zeros(2))


def test_candidate_rejects_non_finite_features():
    with pytest.raises(ValidationError):
        Candidate(id=0, tokens=("a",), features=np.array([1.0, np.nan]))


def test_candidate_features_are_read_only():
    cand = Candidate(id=0, tokens=("a",), features=np.ones(3))
    with pytest.raises(ValueError):
        cand.features[0] = 5.0


def test_instance_requires_contiguous_candidate_ids():
    good = Candidate(id=0, tokens=("a",), features=np.zeros(2))
    bad = Candidate(id=2, tokens=("b",), features=np.zeros(2))
    with pytest.raises(ValidationError):
        Instance(id=1, candidates=(good, bad))


def test_instance_rejects_mixed_feature_dims():
    c0 = Candidate(id=0, tokens=("a",), features=np.zeros(2))
    c1 = Candidate(id=1, tokens=("b",), features=np.zeros(3))
    with pytest.raises(ValidationError):
        Instance(id=1, candidates=(c0, c1))


def test_instance_rejects_unknown_split():
    c0 = Candidate(id=0, tokens=("a",), features=np.zeros(2))
    with pytest.raises(ValidationError):
        Instance(id=1, candidates=(c0,), split="dev")


def test_instance_needs_at_least_one_candidate():
    with pytest.raises(ValidationError):
        Instance(id=1, candidates=())


def test_feature_matrix_stacks_candidates_in_order():
    inst = make_instance(7, num_candidates=4, dim=3)
    mat = inst.feature_matrix
    assert mat.shape == (4, 3)
    for k in range(4):
        assert np.array_equal(mat[k], inst.candidates[k].features)


def test_dataset_rejects_duplicate_instance_ids():
    with pytest.raises(ValidationError):
        Dataset([make_instance(1), make_instance(1)])


def test_dataset_rejects_inconsistent_feature_dim():
    with pytest.raises(ValidationError):
        Dataset([make_instance(1, dim=4), make_instance(2, dim=5)])


def test_dataset_rejects_empty():
    with pytest.raises(ValidationError):
        Dataset([])


def test_dataset_split_filters_and_validates_name():
    ds = Dataset(
        [
            make_instance(1, split="train"),
            make_instance(2, split="validation"),
            make_instance(3, split="train"),
        ]
    )
    assert [i.id for i in ds.split("train")] == [1, 3]
    assert [i.id for i in ds.split("test")] == []
    with pytest.raises(ValidationError):
        ds.split("holdout")


def test_dataset_vocabulary_spans_candidates_and_references():
    ds = Dataset([make_instance(1, reference=("ref", "tok"))])
    assert "ref" in ds.vocabulary
    assert "t1" in ds.vocabulary
    assert "c0" in ds.vocabulary


def test_log_entry_bounds():
    LogEntry(instance_id=0, candidate_id=0, reward=0.0, propensity=1.0, mode="deterministic")
    LogEntry(instance_id=0, candidate_id=0, reward=1.0, propensity=0.001, mode="stochastic")
    with pytest.raises(ValidationError):
        LogEntry(instance_id=0, candidate_id=0, reward=1.5, propensity=0.5, mode="stochastic")
    with pytest.raises(ValidationError):
        LogEntry(instance_id=0, candidate_id=0, reward=-0.1, propensity=0.5, mode="stochastic")
    with pytest.raises(ValidationError):
        LogEntry(instance_id=0, candidate_id=0, reward=0.5, propensity=0.0, mode="stochastic")
    with pytest.raises(ValidationError):
        LogEntry(instance_id=0, candidate_id=0, reward=0.5, propensity=1.1, mode="stochastic")
    with pytest.raises(ValidationError):
        LogEntry(instance_id=0, candidate_id=0, reward=0.5, propensity=float("nan"), mode="stochastic")


def test_deterministic_entries_must_have_unit_propensity():
    with pytest.raises(ValidationError):
        LogEntry(instance_id=0, candidate_id=0, reward=0.5, propensity=0.9, mode="deterministic")


def test_log_entry_rejects_unknown_mode():
    with pytest.raises(ValidationError):
        LogEntry(instance_id=0, candidate_id=0, reward=0.5, propensity=0.5, mode="greedy")


# ---------------------------------------------------------------------------
# Canonical formatting
# ---------------------------------------------------------------------------


def test_format_float_round_trips_exactly():
    rng = np.random.default_rng(0)
    values = list(rng.normal(scale=1e3, size=200)) + [0.0, 1.0, -1.0, 1e-300, 1e300, 0.1]
    for x in values:
        assert float(format_float(x)) == float(x)


def test_format_float_rejects_non_finite():
    for bad in (math.inf, -math.inf, math.nan):
        with pytest.raises(ValidationError):
            format_float(bad)


def test_canonical_json_is_deterministic_and_ordered():
    value = {"b": 1, "a": [0.1, True, None, "x"], "n": {"k": 2.5}}
    text = canonical_json(value)
    assert text == canonical_json(value)
    assert text.index('"b"') < text.index('"a"') < text.index('"n"')
    assert "0.10000000000000001" in text


def test_canonical_json_handles_numpy_scalars_and_arrays():
    text = canonical_json({"v": np.float64(0.5), "i": np.int64(3), "a": np.array([1.0, 2.0])})
    assert text == '{"v": 0.5, "i": 3, "a": [1, 2]}'


def test_canonical_json_rejects_unserializable():
    with pytest.raises(ValidationError):
        canonical_json({"x": object()})


def test_write_json_round_trip(tmp_path):
    path = str(tmp_path / "doc.json")
    value = {"weights": [0.25, -1.5], "alpha": 5.0, "name": "p"}
    write_json(value, path)
    assert read_json(path) == value


# ---------------------------------------------------------------------------
# Dataset / log files
# ---------------------------------------------------------------------------


def test_dataset_file_round_trip_is_byte_identical(tmp_path):
    ds = Dataset(
        [
            make_instance(3, split="test", reference=None),
            make_instance(1, split="train"),
            make_instance(2, split="validation"),
        ]
    )
    p1 = str(tmp_path / "d1.jsonl")
    p2 = str(tmp_path / "d2.jsonl")
    write_dataset(ds, p1)
    loaded = read_dataset(p1)
    assert loaded == ds
    write_dataset(loaded, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_dataset_file_orders_instances_by_id(tmp_path):
    ds = Dataset([make_instance(5), make_instance(2)])
    path = str(tmp_path / "d.jsonl")
    write_dataset(ds, path)
    lines = open(path).read().splitlines()
    assert '"id": 2' in lines[0]
    assert '"id": 5' in lines[1]


def test_read_dataset_reports_offending_line(tmp_path):
    path = str(tmp_path / "bad.jsonl")
    ds = Dataset([make_instance(1)])
    write_dataset(ds, path)
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(ParseError) as err:
        read_dataset(path)
    assert err.value.path == path
    assert err.value.line == 2


def test_read_dataset_rejects_missing_field(tmp_path):
    path = str(tmp_path / "bad.jsonl")
    with open(path, "w") as fh:
        fh.write('{"id": 1, "split": "train"}\n')
    with pytest.raises(ParseError) as err:
        read_dataset(path)
    assert err.value.line == 1


def test_log_round_trip(tmp_path):
    ds = Dataset([make_instance(1), make_instance(2)])
    entries = [
        LogEntry(instance_id=1, candidate_id=0, reward=0.75, propensity=1.0, mode="deterministic"),
        LogEntry(instance_id=2, candidate_id=2, reward=0.5, propensity=0.125, mode="stochastic"),
    ]
    path = str(tmp_path / "log.jsonl")
    write_log(entries, path)
    loaded = read_log(path, ds)
    assert loaded.skipped == 0
    assert list(loaded) == entries


def test_read_log_rejects_unknown_instance(tmp_path):
    ds = Dataset([make_instance(1)])
    path = str(tmp_path / "log.jsonl")
    write_log(
        [LogEntry(instance_id=9, candidate_id=0, reward=0.5, propensity=1.0, mode="deterministic")],
        path,
    )
    with pytest.raises(ParseError):
        read_log(path, ds)


def test_read_log_missing_candidate_modes(tmp_path):
    ds = Dataset([make_instance(1, num_candidates=2)])
    path = str(tmp_path / "log.jsonl")
    write_log(
        [
            LogEntry(instance_id=1, candidate_id=0, reward=0.5, propensity=1.0, mode="deterministic"),
            LogEntry(instance_id=1, candidate_id=7, reward=0.5, propensity=1.0, mode="deterministic"),
        ],
        path,
    )
    with pytest.raises(ParseError):
        read_log(path, ds, missing_candidate="error")
    loaded = read_log(path, ds, missing_candidate="skip-with-count")
    assert loaded.skipped == 1
    assert len(loaded) == 1
    with pytest.raises(ValueError):
        read_log(path, ds, missing_candidate="drop")


def test_read_log_flags_invalid_values_with_location(tmp_path):
    path = str(tmp_path / "log.jsonl")
    with open(path, "w") as fh:
        fh.write(
            '{"instance_id": 1, "candidate_id": 0, "reward": 2.0, "propensity": 1.0, "mode": "deterministic"}\n'
        )
    ds = Dataset([make_instance(1)])
    with pytest.raises(ParseError) as err:
        read_log(path, ds)
    assert err.value.line == 1


def test_missing_files_raise_ioerror(tmp_path):
    with pytest.raises(IOError):
        read_json(str(tmp_path / "nope.json"))
    with pytest.raises(IOError):
        read_dataset(str(tmp_path / "nope.jsonl"))
