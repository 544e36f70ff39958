"""Domain data model and line-delimited serialization.

Datasets hold instances with closed candidate sets; logs hold one record
per logged interaction.  Both use a canonical JSON-lines encoding (stable
field order, floats rendered with 17 significant digits) so that
write/read round-trips are bit-identical and repeated runs produce
byte-identical artifacts.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

SPLITS = ("train", "validation", "test")
MODES = ("deterministic", "stochastic")


class ValidationError(ValueError):
    """A structural invariant of the data model was violated."""


class ParseError(ValueError):
    """A serialized record could not be parsed.

    Carries the offending path and 1-based line number when available.
    """

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:" if line is None else f"{path}:{line}: "
        super().__init__(prefix + message)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Candidate:
    """One output structure: its tokens and fixed-width feature vector."""

    id: int
    tokens: tuple[str, ...]
    features: np.ndarray

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValidationError(f"candidate {self.id}: tokens must be non-empty")
        object.__setattr__(self, "tokens", tuple(str(t) for t in self.tokens))
        feats = _readonly(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 1:
            raise ValidationError(f"candidate {self.id}: features must be a flat vector")
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"candidate {self.id}: features must be finite")
        object.__setattr__(self, "features", feats)

    def __eq__(self, other):
        if not isinstance(other, Candidate):
            return NotImplemented
        return (
            self.id == other.id
            and self.tokens == other.tokens
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class Instance:
    """One input with its finite candidate set."""

    id: int
    candidates: tuple[Candidate, ...]
    reference: Optional[tuple[str, ...]] = None
    split: str = "train"

    def __post_init__(self):
        cands = tuple(self.candidates)
        if len(cands) < 1:
            raise ValidationError(f"instance {self.id}: needs at least one candidate")
        for pos, cand in enumerate(cands):
            if cand.id != pos:
                raise ValidationError(
                    f"instance {self.id}: candidate ids must be 0..K-1 (got {cand.id} at {pos})"
                )
        dims = {c.features.shape[0] for c in cands}
        if len(dims) != 1:
            raise ValidationError(
                f"instance {self.id}: candidates disagree on feature dimension {sorted(dims)}"
            )
        if self.split not in SPLITS:
            raise ValidationError(f"instance {self.id}: unknown split {self.split!r}")
        object.__setattr__(self, "candidates", cands)
        if self.reference is not None:
            object.__setattr__(self, "reference", tuple(str(t) for t in self.reference))

    @property
    def num_candidates(self) -> int:
        return len(self.candidates)

    @property
    def feature_dim(self) -> int:
        return self.candidates[0].features.shape[0]

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        """(K, d) stack of candidate feature vectors, read-only."""
        return _readonly(np.stack([c.features for c in self.candidates]))

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and self.reference == other.reference
            and self.candidates == other.candidates
        )


class Dataset:
    """Instances keyed by id, with a consistent feature dimension."""

    def __init__(self, instances: Iterable[Instance]):
        self.instances: dict[int, Instance] = {}
        dim = None
        for inst in instances:
            if inst.id in self.instances:
                raise ValidationError(f"duplicate instance id {inst.id}")
            if dim is None:
                dim = inst.feature_dim
            elif inst.feature_dim != dim:
                raise ValidationError(
                    f"instance {inst.id}: feature dimension {inst.feature_dim} != dataset's {dim}"
                )
            self.instances[inst.id] = inst
        if dim is None:
            raise ValidationError("dataset must contain at least one instance")
        self.feature_dim: int = dim

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self.instances.values())

    def __getitem__(self, instance_id: int) -> Instance:
        return self.instances[instance_id]

    def split(self, name: str) -> list[Instance]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}")
        return [inst for inst in self.instances.values() if inst.split == name]

    @cached_property
    def vocabulary(self) -> frozenset[str]:
        """All tokens occurring in candidates or references."""
        vocab: set[str] = set()
        for inst in self.instances.values():
            if inst.reference is not None:
                vocab.update(inst.reference)
            for cand in inst.candidates:
                vocab.update(cand.tokens)
        return frozenset(vocab)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.feature_dim == other.feature_dim and self.instances == other.instances


@dataclass(frozen=True)
class LogEntry:
    """One logged interaction: chosen candidate, observed reward, propensity."""

    instance_id: int
    candidate_id: int
    reward: float
    propensity: float
    mode: str

    def __post_init__(self):
        object.__setattr__(self, "reward", float(self.reward))
        object.__setattr__(self, "propensity", float(self.propensity))
        if self.mode not in MODES:
            raise ValidationError(f"log entry: unknown mode {self.mode!r}")
        if not (0.0 <= self.reward <= 1.0) or not math.isfinite(self.reward):
            raise ValidationError(f"log entry: reward {self.reward} outside [0, 1]")
        if not (0.0 < self.propensity <= 1.0):
            raise ValidationError(f"log entry: propensity {self.propensity} outside (0, 1]")
        if self.mode == "deterministic" and self.propensity != 1.0:
            raise ValidationError(
                f"log entry: deterministic mode requires propensity 1.0, got {self.propensity}"
            )


@dataclass
class LoadedLog:
    """Log entries plus the count of skipped records (skip-with-count mode)."""

    entries: list[LogEntry] = field(default_factory=list)
    skipped: int = 0

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (exact round-trip)."""
    x = float(x)
    if not math.isfinite(x):
        raise ValidationError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def canonical_json(value) -> str:
    """Deterministic JSON: insertion-ordered keys, canonical float format."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, np.ndarray):
        return canonical_json(value.tolist())
    if isinstance(value, dict):
        items = ", ".join(f"{json.dumps(str(k), ensure_ascii=False)}: {canonical_json(v)}" for k, v in value.items())
        return "{" + items + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(canonical_json(v) for v in value) + "]"
    raise ValidationError(f"cannot serialize value of type {type(value).__name__}")


def _open_for_write(path: str):
    try:
        return open(path, "w", encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def write_json(value, path: str) -> None:
    """Write a single canonical JSON document."""
    with _open_for_write(path) as fh:
        fh.write(canonical_json(value))
        fh.write("\n")


def read_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IOError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc


def _instance_record(inst: Instance) -> dict:
    rec: dict = {"id": inst.id, "split": inst.split}
    if inst.reference is not None:
        rec["reference"] = list(inst.reference)
    rec["candidates"] = [
        {"tokens": list(c.tokens), "features": c.features} for c in inst.candidates
    ]
    return rec


def write_dataset(dataset: Dataset, path: str) -> None:
    """One canonical JSON record per instance, ordered by instance id."""
    with _open_for_write(path) as fh:
        for inst_id in sorted(dataset.instances):
            fh.write(canonical_json(_instance_record(dataset[inst_id])))
            fh.write("\n")


def _parse_instance(rec: dict, path: str, line: int) -> Instance:
    try:
        inst_id = int(rec["id"])
        split = rec["split"]
        reference = rec.get("reference")
        raw_cands = rec["candidates"]
        candidates = tuple(
            Candidate(
                id=pos,
                tokens=tuple(c["tokens"]),
                features=np.asarray(c["features"], dtype=np.float64),
            )
            for pos, c in enumerate(raw_cands)
        )
        return Instance(
            id=inst_id,
            candidates=candidates,
            reference=tuple(reference) if reference is not None else None,
            split=split,
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed instance record: {exc!r}", path=path, line=line) from exc


def read_dataset(path: str) -> Dataset:
    """Parse and validate a line-delimited dataset file."""
    instances = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot read {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=line_no) from exc
            instances.append(_parse_instance(rec, path, line_no))
    return Dataset(instances)


def write_log(entries: Sequence[LogEntry], path: str) -> None:
    """One canonical JSON record per log entry, in given order."""
    with _open_for_write(path) as fh:
        for e in entries:
            rec = {
                "instance_id": e.instance_id,
                "candidate_id": e.candidate_id,
                "reward": e.reward,
                "propensity": e.propensity,
                "mode": e.mode,
            }
            fh.write(canonical_json(rec))
            fh.write("\n")


def read_log(path: str, dataset: Dataset, *, missing_candidate: str = "error") -> LoadedLog:
    """Parse and validate a log file against a dataset.

    missing_candidate: "error" rejects entries whose candidate_id is not in
    the referenced instance; "skip-with-count" drops them and counts drops
    (for imported logs whose logged output is absent from the candidate set).
    """
    if missing_candidate not in ("error", "skip-with-count"):
        raise ValueError(f"unknown missing_candidate policy {missing_candidate!r}")
    result = LoadedLog()
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot read {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=line_no) from exc
            try:
                entry = LogEntry(
                    instance_id=int(rec["instance_id"]),
                    candidate_id=int(rec["candidate_id"]),
                    reward=rec["reward"],
                    propensity=rec["propensity"],
                    mode=rec["mode"],
                )
            except (KeyError, TypeError) as exc:
                raise ParseError(f"malformed log record: {exc!r}", path=path, line=line_no) from exc
            except ValidationError as exc:
                raise ParseError(str(exc), path=path, line=line_no) from exc
            if entry.instance_id not in dataset.instances:
                raise ParseError(
                    f"log entry references unknown instance {entry.instance_id}",
                    path=path,
                    line=line_no,
                )
            inst = dataset[entry.instance_id]
            if not (0 <= entry.candidate_id < inst.num_candidates):
                if missing_candidate == "skip-with-count":
                    result.skipped += 1
                    continue
                raise ParseError(
                    f"log entry references candidate {entry.candidate_id} "
                    f"absent from instance {entry.instance_id}",
                    path=path,
                    line=line_no,
                )
            result.entries.append(entry)
    return result


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)
