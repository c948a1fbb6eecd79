"""The experiment log: an append-only record of (config, rationale, result)
triples that doubles as the proposal agent's memory, with durable JSON
serialization, best-so-far queries and milestone aggregation."""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import jsonschema

from .space import Config
from .tasks import TrainingTrajectory

FORMAT_VERSION = 1

STATUS_SUCCEEDED = "succeeded"
STATUS_FAILED = "failed"

RUN_LOG_SCHEMA = {
    "type": "object",
    "required": ["format_version", "metadata", "entries"],
    "additionalProperties": False,
    "properties": {
        "format_version": {"type": "integer"},
        "metadata": {
            "type": "object",
            "required": ["task_id", "space_id", "strategy", "seed", "direction", "created_at"],
            "additionalProperties": True,
            "properties": {
                "task_id": {"type": "string"},
                "space_id": {"type": "string"},
                "strategy": {"type": "string"},
                "seed": {"type": "integer"},
                "direction": {"enum": ["maximize", "minimize"]},
                "created_at": {"type": "number"},
                "aborted": {"type": "boolean"},
            },
        },
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["trial_index", "config", "rationale", "result",
                             "started_at", "finished_at"],
                "additionalProperties": False,
                "properties": {
                    "trial_index": {"type": "integer", "minimum": 1},
                    "config": {"type": "object"},
                    "rationale": {"type": "string"},
                    "started_at": {"type": "number"},
                    "finished_at": {"type": "number"},
                    "transcript_ref": {"type": ["string", "null"]},
                    "result": {
                        "type": "object",
                        "required": ["status", "final_score", "analysis_text", "trajectory"],
                        "additionalProperties": False,
                        "properties": {
                            "status": {"enum": ["succeeded", "failed"]},
                            "final_score": {"type": ["number", "null"]},
                            "analysis_text": {"type": "string"},
                            "trajectory": {"type": ["object", "null"]},
                        },
                    },
                },
            },
        },
        "final_analysis": {
            "type": ["object", "null"],
            "required": ["best_config", "best_reasoning", "influence_notes", "future_directions"],
            "additionalProperties": False,
            "properties": {
                "best_config": {"type": "object"},
                "best_reasoning": {"type": "string"},
                "influence_notes": {"type": "string"},
                "future_directions": {"type": "string"},
            },
        },
    },
}


class LogError(Exception):
    pass


class IndexMismatch(LogError):
    """Appended entry's trial_index does not continue the sequence."""


class FormatVersionMismatch(LogError):
    """The document's format version is newer than this code understands."""


class LogReadError(LogError):
    """A run-log document failed to parse; carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class LogWriteError(LogError):
    pass


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one trial. A failed trial never carries a score; a
    succeeded one scores the goal metric's final value."""

    status: str
    final_score: float | None
    analysis_text: str = ""
    trajectory: TrainingTrajectory | None = None

    def __post_init__(self):
        if self.status not in (STATUS_SUCCEEDED, STATUS_FAILED):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == STATUS_FAILED and self.final_score is not None:
            raise ValueError("failed trials cannot carry a final score")
        if self.status == STATUS_SUCCEEDED and self.final_score is None:
            raise ValueError("succeeded trials must carry a final score")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "final_score": self.final_score,
            "analysis_text": self.analysis_text,
            "trajectory": self.trajectory.to_dict() if self.trajectory else None,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "TrialResult":
        traj = obj.get("trajectory")
        return cls(
            status=obj["status"],
            final_score=obj["final_score"],
            analysis_text=obj.get("analysis_text", ""),
            trajectory=TrainingTrajectory.from_dict(traj) if traj else None,
        )


@dataclass(frozen=True)
class FinalAnalysis:
    """End-of-run summary: the best configuration, why it won, what each
    hyperparameter did, and where to look next."""

    best_config: Config
    best_reasoning: str
    influence_notes: str = ""
    future_directions: str = ""

    def to_dict(self) -> dict:
        return {
            "best_config": dict(self.best_config),
            "best_reasoning": self.best_reasoning,
            "influence_notes": self.influence_notes,
            "future_directions": self.future_directions,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "FinalAnalysis":
        return cls(
            best_config=dict(obj["best_config"]),
            best_reasoning=obj["best_reasoning"],
            influence_notes=obj.get("influence_notes", ""),
            future_directions=obj.get("future_directions", ""),
        )


@dataclass(frozen=True)
class LogEntry:
    trial_index: int
    config: Config
    rationale: str
    result: TrialResult
    started_at: float
    finished_at: float
    transcript_ref: str | None = None

    def __post_init__(self):
        if self.finished_at < self.started_at:
            raise ValueError("finished_at must be >= started_at")

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "config": dict(self.config),
            "rationale": self.rationale,
            "result": self.result.to_dict(),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "transcript_ref": self.transcript_ref,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "LogEntry":
        return cls(
            trial_index=int(obj["trial_index"]),
            config=dict(obj["config"]),
            rationale=obj["rationale"],
            result=TrialResult.from_dict(obj["result"]),
            started_at=float(obj["started_at"]),
            finished_at=float(obj["finished_at"]),
            transcript_ref=obj.get("transcript_ref"),
        )


@dataclass(frozen=True)
class RunMetadata:
    task_id: str = ""
    space_id: str = ""
    strategy: str = ""
    seed: int = 0
    direction: str = "maximize"
    created_at: float = 0.0
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "space_id": self.space_id,
            "strategy": self.strategy,
            "seed": self.seed,
            "direction": self.direction,
            "created_at": self.created_at,
            "aborted": self.aborted,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "RunMetadata":
        return cls(
            task_id=obj.get("task_id", ""),
            space_id=obj.get("space_id", ""),
            strategy=obj.get("strategy", ""),
            seed=int(obj.get("seed", 0)),
            direction=obj.get("direction", "maximize"),
            created_at=float(obj.get("created_at", 0.0)),
            aborted=bool(obj.get("aborted", False)),
        )


@dataclass
class ExperimentLog:
    """One run's memory: ordered trial entries plus the final analysis.

    When ``path`` is set, every append rewrites the file before returning,
    so a crash loses at most the in-flight trial.
    """

    metadata: RunMetadata = field(default_factory=RunMetadata)
    entries: list[LogEntry] = field(default_factory=list)
    final_analysis: FinalAnalysis | None = None
    path: str | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: LogEntry) -> None:
        if entry.trial_index != len(self.entries) + 1:
            raise IndexMismatch(
                f"expected trial_index {len(self.entries) + 1}, got {entry.trial_index}"
            )
        self.entries.append(entry)
        if self.path is not None:
            self.save(self.path)

    def save(self, path) -> None:
        try:
            payload = json.dumps(serialize(self), indent=1)
            directory = os.path.dirname(os.fspath(path)) or "."
            fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(payload)
            os.replace(tmp, os.fspath(path))
        except OSError as e:
            raise LogWriteError(f"could not persist run log to {path}: {e}") from e

    def scored_entries(self) -> list[LogEntry]:
        return [e for e in self.entries if e.result.status == STATUS_SUCCEEDED]


@dataclass(frozen=True)
class BestSoFar:
    score: float
    trial_index: int


def best_so_far(log: ExperimentLog, t: int, direction: str) -> BestSoFar | None:
    """Best score among trials 1..min(t, n); failed trials are excluded and
    ties go to the earliest trial. None when nothing succeeded."""
    if t < 1:
        raise ValueError("t must be >= 1")
    best: BestSoFar | None = None
    for entry in log.entries[:t]:
        score = entry.result.final_score
        if score is None:
            continue
        if best is None:
            best = BestSoFar(score, entry.trial_index)
        elif direction == "maximize" and score > best.score:
            best = BestSoFar(score, entry.trial_index)
        elif direction == "minimize" and score < best.score:
            best = BestSoFar(score, entry.trial_index)
    return best


@dataclass(frozen=True)
class MilestoneRow:
    t: int
    values: tuple[float | None, ...]  # one slot per run, None where no score yet
    mean: float | None
    sample_std: float | None
    n: int
    missing: int
    single_run: bool


@dataclass(frozen=True)
class MilestoneReport:
    milestones: tuple[MilestoneRow, ...]
    direction: str
    n_runs: int


def milestone_report(runs: Sequence[ExperimentLog], milestones: Iterable[int],
                     direction: str) -> MilestoneReport:
    """Best-so-far statistics at each trial milestone.

    Per milestone, mean and sample standard deviation (n - 1 denominator)
    are computed across runs; runs with no scored trial yet are recorded as
    missing and excluded from the statistics. A single contributing run
    reports std 0 with the single-run flag set.
    """
    if not runs:
        raise ValueError("milestone_report needs at least one run")
    rows = []
    for t in milestones:
        if t < 1:
            raise ValueError("milestones must be >= 1")
        values: list[float | None] = []
        for run in runs:
            found = best_so_far(run, t, direction)
            values.append(found.score if found else None)
        present = [v for v in values if v is not None]
        n = len(present)
        if n == 0:
            mean = std = None
        else:
            mean = sum(present) / n
            if n == 1:
                std = 0.0
            else:
                var = sum((v - mean) ** 2 for v in present) / (n - 1)
                std = math.sqrt(var)
        rows.append(MilestoneRow(
            t=t, values=tuple(values), mean=mean, sample_std=std,
            n=n, missing=len(values) - n, single_run=(n == 1),
        ))
    return MilestoneReport(milestones=tuple(rows), direction=direction, n_runs=len(runs))


def serialize(log: ExperimentLog) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "metadata": log.metadata.to_dict(),
        "entries": [e.to_dict() for e in log.entries],
        "final_analysis": log.final_analysis.to_dict() if log.final_analysis else None,
    }


def deserialize(document: str | Mapping[str, Any]) -> ExperimentLog:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise LogReadError(f"run log is not valid JSON at byte {e.pos}: {e.msg}",
                               offset=e.pos) from e
    if not isinstance(document, Mapping):
        raise LogReadError("run log document must be an object")
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"run log format version {version!r} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        jsonschema.validate(document, RUN_LOG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise LogReadError(f"run log violates schema: {e.message}") from e
    final = document.get("final_analysis")
    return ExperimentLog(
        metadata=RunMetadata.from_dict(document["metadata"]),
        entries=[LogEntry.from_dict(e) for e in document["entries"]],
        final_analysis=FinalAnalysis.from_dict(final) if final else None,
    )


def load_log(path) -> ExperimentLog:
    with open(path, "r", encoding="utf-8") as f:
        log = deserialize(f.read())
    log.path = os.fspath(path)
    return log


def export_trajectory_csv(runs: Sequence[ExperimentLog], path, direction: str) -> None:
    """Flat per-trial CSV (run, trial, score, best_so_far) for plotting."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "trial", "score", "best_so_far"])
        for run_index, run in enumerate(runs, start=1):
            for entry in run.entries:
                best = best_so_far(run, entry.trial_index, direction)
                writer.writerow([
                    run_index,
                    entry.trial_index,
                    "" if entry.result.final_score is None else repr(entry.result.final_score),
                    "" if best is None else repr(best.score),
                ])
