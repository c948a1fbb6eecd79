"""Experiment driver: the per-run trial loop (propose, execute, append,
analyze), multi-run seeded experiments with milestone aggregation, and
report emission."""
from __future__ import annotations

import concurrent.futures
import csv
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import executor as executor_mod
from .baselines import TpeState, observations_from_log, random_propose, tpe_propose
from .creator import BackgroundInfo, Creator, EmptyLog, OptimizationGoal, Proposal, ProposalError
from .explog import (
    ExperimentLog,
    FinalAnalysis,
    LogEntry,
    MilestoneReport,
    RunMetadata,
    best_so_far,
    export_trajectory_csv,
    load_log,
    milestone_report,
)
from .llm import BackendSpec, CompletionParams, LlmError
from .space import SearchSpace, load_search_space, parse_search_space
from .tasks import TaskSpec

STRATEGIES = ("random", "tpe", "agent", "opro")
EXECUTOR_MODES = ("direct", "agentic")
DEFAULT_MILESTONES = (1, 3, 5, 10)
NON_AGENT_RATIONALE = "n/a (non-agent strategy)"


class PlanError(Exception):
    pass


class RunAborted(Exception):
    """A run could not finish (backend hard failure); the partial log is
    preserved on disk and attached here."""

    def __init__(self, message: str, log: ExperimentLog | None = None):
        super().__init__(message)
        self.log = log


class ExperimentFailed(Exception):
    """Every run of the experiment aborted."""


class MilestoneMismatch(Exception):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    task: TaskSpec
    space: SearchSpace
    background: BackgroundInfo
    strategy: str
    trials_per_run: int
    n_runs: int
    seeds: tuple[int, ...]
    milestones: tuple[int, ...] = DEFAULT_MILESTONES
    strategy_params: dict = field(default_factory=dict)
    backend: BackendSpec | None = None
    completion: CompletionParams = field(default_factory=CompletionParams)
    executor_completion: CompletionParams = field(
        default_factory=lambda: CompletionParams(temperature=0.0))
    executor_mode: str = "direct"
    output_dir: Path = Path("out")
    workers: int = 1
    train_timeout: float = 300.0
    name: str = "experiment"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PlanError(f"unknown strategy {self.strategy!r}")
        if self.executor_mode not in EXECUTOR_MODES:
            raise PlanError(f"unknown executor mode {self.executor_mode!r}")
        if self.trials_per_run < 1:
            raise PlanError("trials_per_run must be >= 1")
        if self.n_runs < 1:
            raise PlanError("n_runs must be >= 1")
        if len(self.seeds) != self.n_runs:
            raise PlanError(f"need {self.n_runs} seeds, got {len(self.seeds)}")
        if len(set(self.seeds)) != len(self.seeds):
            raise PlanError("seeds must be unique")
        for t in self.milestones:
            if not 1 <= t <= self.trials_per_run:
                raise PlanError(f"milestone {t} outside 1..{self.trials_per_run}")
        if self.needs_backend and self.backend is None:
            raise PlanError(f"strategy {self.strategy!r} / mode {self.executor_mode!r} "
                            "requires a backend")
        if self.background.optimization_goal.direction != self.task.direction:
            raise PlanError("background optimization goal direction disagrees with the task")

    @property
    def needs_backend(self) -> bool:
        return self.strategy in ("agent", "opro") or self.executor_mode == "agentic"


def derive_seeds(master_seed: int, n_runs: int) -> tuple[int, ...]:
    """Per-run seeds from (master seed, run index); adding runs never
    changes earlier seeds."""
    return tuple(
        int(np.random.SeedSequence([master_seed, i]).generate_state(1)[0])
        for i in range(n_runs)
    )


def _background_from_dict(obj: Mapping[str, Any]) -> BackgroundInfo:
    goal = obj.get("optimization_goal", {})
    return BackgroundInfo(
        model_info=obj.get("model_info", ""),
        dataset_info=obj.get("dataset_info", ""),
        optimization_goal=OptimizationGoal(
            metric_name=goal.get("metric_name", ""),
            direction=goal.get("direction", "maximize"),
            goal_text=goal.get("goal_text", ""),
        ),
        hp_info=obj.get("hp_info", ""),
    )


def _backend_from_dict(obj: Mapping[str, Any] | None, base_dir: Path) -> BackendSpec | None:
    if not obj:
        return None
    kind = obj.get("kind", "")
    if kind == "scripted" and "transcript_path" in obj:
        path = Path(obj["transcript_path"])
        if not path.is_absolute():
            path = base_dir / path
        with open(path, "r", encoding="utf-8") as f:
            transcript = tuple(json.load(f))
        return BackendSpec(kind="scripted", transcript=transcript)
    return BackendSpec(
        kind=kind,
        base_url=obj.get("base_url", ""),
        api_key_env=obj.get("api_key_env", "OPENAI_API_KEY"),
        transcript=tuple(obj.get("transcript", ())),
        strategy=obj.get("strategy", "bisect-refine"),
    )


def plan_from_dict(obj: Mapping[str, Any], base_dir: Path = Path(".")) -> ExperimentPlan:
    try:
        task = TaskSpec.from_dict(obj["task"])
        if "space" in obj:
            space = parse_search_space(obj["space"])
        elif "space_path" in obj:
            path = Path(obj["space_path"])
            space = load_search_space(path if path.is_absolute() else base_dir / path)
        else:
            raise PlanError("plan must embed 'space' or point at 'space_path'")
        n_runs = int(obj.get("n_runs", 1))
        if "seeds" in obj:
            seeds = tuple(int(s) for s in obj["seeds"])
        else:
            seeds = derive_seeds(int(obj.get("master_seed", 0)), n_runs)
        completion_obj = dict(obj.get("completion", {}))
        executor_temperature = completion_obj.pop("executor_temperature", 0.0)
        completion = CompletionParams(**completion_obj)
        executor_completion = replace(completion, temperature=executor_temperature)
        out_dir = Path(obj.get("output_dir", "out"))
        if not out_dir.is_absolute():
            out_dir = base_dir / out_dir
        return ExperimentPlan(
            task=task,
            space=space,
            background=_background_from_dict(obj.get("background", {})),
            strategy=obj.get("strategy", "random"),
            strategy_params=dict(obj.get("strategy_params", {})),
            trials_per_run=int(obj.get("trials_per_run", 10)),
            n_runs=n_runs,
            seeds=seeds,
            milestones=tuple(int(t) for t in obj.get("milestones", DEFAULT_MILESTONES)),
            backend=_backend_from_dict(obj.get("backend"), base_dir),
            completion=completion,
            executor_completion=executor_completion,
            executor_mode=obj.get("executor_mode", "direct"),
            output_dir=out_dir,
            workers=int(obj.get("workers", 1)),
            train_timeout=float(obj.get("train_timeout", 300.0)),
            name=obj.get("name", "experiment"),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, PlanError):
            raise
        raise PlanError(f"invalid plan: {e}") from e


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise PlanError(f"plan file is not valid JSON: {e}") from e
    return plan_from_dict(obj, base_dir=path.parent)


# --- single run -----------------------------------------------------------------

def _run_dir(plan: ExperimentPlan, run_index: int) -> Path:
    return Path(plan.output_dir) / f"run_{run_index + 1:02d}"


def _train_command(plan: ExperimentPlan, run_dir: Path, seed: int) -> str:
    if plan.task.kind == "external":
        return plan.task.params["command"]
    task_file = run_dir / "task.json"
    with open(task_file, "w", encoding="utf-8") as f:
        json.dump(plan.task.to_dict(), f, indent=1)
    return (
        f"{sys.executable} -m looptune.run_trial {task_file} "
        "{config} {log} --seed " + str(seed)
    )


def _propose(plan: ExperimentPlan, creator: Creator | None, log: ExperimentLog,
             rng: np.random.Generator) -> Proposal:
    if plan.strategy == "random":
        return Proposal(config=random_propose(plan.space, rng), rationale=NON_AGENT_RATIONALE)
    if plan.strategy == "tpe":
        state = TpeState(
            observations=observations_from_log(log),
            rng=rng,
            gamma=float(plan.strategy_params.get("gamma", 0.25)),
            n_candidates=int(plan.strategy_params.get("n_candidates", 24)),
            cold_start=int(plan.strategy_params.get("cold_start", 5)),
        )
        return Proposal(config=tpe_propose(plan.space, state, plan.task.direction),
                        rationale=NON_AGENT_RATIONALE)
    assert creator is not None
    return creator.create(log, plan.space, rng)


def run_single(plan: ExperimentPlan, run_index: int, resume: bool = False) -> ExperimentLog:
    """Execute one full run: for t in 1..T propose, execute and append; then
    attach the final analysis. The log file is rewritten after every trial,
    so a crash loses at most the in-flight trial; with ``resume`` an
    interrupted run continues from its persisted log."""
    seed = plan.seeds[run_index]
    run_dir = _run_dir(plan, run_index)
    workdir = run_dir / "work"
    prompts_dir = run_dir / "prompts"
    transcripts_dir = run_dir / "transcripts"
    for d in (workdir, prompts_dir, transcripts_dir):
        d.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / "log.json"

    if resume and log_path.exists():
        log = load_log(log_path)
    else:
        log = ExperimentLog(
            metadata=RunMetadata(
                task_id=f"{plan.name}:{plan.task.kind}",
                space_id=",".join(plan.space.names()),
                strategy=plan.strategy,
                seed=seed,
                direction=plan.task.direction,
                created_at=time.time(),
            ),
            path=str(log_path),
        )
        log.save(log_path)

    env = executor_mod.ExecutorEnv.create(
        workdir,
        train_command=_train_command(plan, run_dir, seed),
        timeout=plan.train_timeout,
    )

    backend = plan.backend.create_session() if plan.needs_backend else None
    creator = None
    if plan.strategy in ("agent", "opro"):
        creator = Creator(
            backend=backend,
            params=plan.completion,
            background=plan.background,
            log_mode="opro" if plan.strategy == "opro" else "full",
        )

    try:
        for t in range(len(log.entries) + 1, plan.trials_per_run + 1):
            # Per-trial rng stream: deterministic and stable under resume.
            rng = np.random.default_rng([seed, t])
            proposal = _propose(plan, creator, log, rng)
            if proposal.prompt_snapshot:
                (prompts_dir / f"trial_{t:02d}.txt").write_text(
                    proposal.prompt_snapshot, encoding="utf-8")
            transcript_ref = None
            if proposal.transcript_text:
                ref = transcripts_dir / f"trial_{t:02d}.creator.txt"
                ref.write_text(proposal.transcript_text, encoding="utf-8")
                transcript_ref = str(ref.relative_to(run_dir))

            started = time.time()
            sink = None
            if plan.executor_mode == "agentic":
                exec_ref = transcripts_dir / f"trial_{t:02d}.executor.txt"

                def sink(text, _path=exec_ref):
                    _path.write_text(text, encoding="utf-8")

            result = executor_mod.execute(
                proposal.config,
                env,
                plan.space,
                plan.task,
                mode=plan.executor_mode,
                backend=backend,
                params=plan.executor_completion,
                seed=seed,
                transcript_sink=sink,
            )
            log.append(LogEntry(
                trial_index=t,
                config=proposal.config,
                rationale=proposal.rationale,
                result=result,
                started_at=started,
                finished_at=time.time(),
                transcript_ref=transcript_ref,
            ))

        if creator is not None:
            try:
                log.final_analysis = creator.analyze(log, plan.task.direction)
            except EmptyLog:
                log.final_analysis = None
        else:
            best = best_so_far(log, plan.trials_per_run, plan.task.direction)
            if best is not None:
                log.final_analysis = FinalAnalysis(
                    best_config=dict(log.entries[best.trial_index - 1].config),
                    best_reasoning=NON_AGENT_RATIONALE,
                )
        log.save(log_path)
    except (ProposalError, LlmError) as e:
        log.metadata = replace(log.metadata, aborted=True)
        log.save(log_path)
        raise RunAborted(f"run {run_index + 1} aborted: {e}", log) from e
    return log


# --- experiment -------------------------------------------------------------------

@dataclass
class ExperimentOutcome:
    report: MilestoneReport
    logs: list[ExperimentLog]
    excluded: int
    report_text: str
    output_dir: Path


def run_experiment(plan: ExperimentPlan) -> ExperimentOutcome:
    """Run every seeded run (run-level parallelism, trials sequential within
    a run), aggregate milestones over the completed ones, and write the
    report document plus the trajectory CSV."""
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    completed: dict[int, ExperimentLog] = {}
    aborted = 0
    if plan.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=plan.workers) as pool:
            futures = {pool.submit(run_single, plan, i): i for i in range(plan.n_runs)}
            for future in concurrent.futures.as_completed(futures):
                i = futures[future]
                try:
                    completed[i] = future.result()
                except RunAborted:
                    aborted += 1
    else:
        for i in range(plan.n_runs):
            try:
                completed[i] = run_single(plan, i)
            except RunAborted:
                aborted += 1

    if not completed:
        raise ExperimentFailed(f"all {plan.n_runs} runs aborted")
    logs = [completed[i] for i in sorted(completed)]
    report = milestone_report(logs, plan.milestones, plan.task.direction)
    report_text = format_report(report, plan.strategy, excluded=aborted,
                                trials_per_run=plan.trials_per_run)

    (out / "report.txt").write_text(report_text, encoding="utf-8")
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report, plan.strategy, aborted), f, indent=1)
    _write_report_csv(out / "report.csv", report)
    export_trajectory_csv(logs, out / "trajectory.csv", plan.task.direction)
    return ExperimentOutcome(report=report, logs=logs, excluded=aborted,
                             report_text=report_text, output_dir=out)


def report_to_dict(report: MilestoneReport, strategy: str, excluded: int = 0) -> dict:
    return {
        "strategy": strategy,
        "direction": report.direction,
        "n_runs": report.n_runs,
        "excluded": excluded,
        "milestones": [
            {
                "t": row.t,
                "mean": row.mean,
                "std": row.sample_std,
                "n": row.n,
                "missing": row.missing,
                "single_run": row.single_run,
                "values": list(row.values),
            }
            for row in report.milestones
        ],
    }


def format_report(report: MilestoneReport, strategy: str, excluded: int = 0,
                  trials_per_run: int | None = None) -> str:
    lines = [
        "Milestone report",
        f"strategy: {strategy}",
        f"direction: {report.direction}",
        f"runs: {report.n_runs}" + (f" ({excluded} excluded)" if excluded else ""),
    ]
    if trials_per_run is not None:
        lines.append(f"trials per run: {trials_per_run}")
    lines.append("")
    lines.append(f"{'t':>4}  {'best-so-far mean':>18}  {'sample std':>12}  {'n':>3}")
    for row in report.milestones:
        if row.mean is None:
            lines.append(f"{row.t:>4}  {'(no scored runs)':>18}  {'':>12}  {row.n:>3}")
            continue
        std = f"{row.sample_std:.6g}" + ("*" if row.single_run else "")
        lines.append(f"{row.t:>4}  {row.mean:>18.6g}  {std:>12}  {row.n:>3}")
    if any(row.single_run for row in report.milestones):
        lines.append("")
        lines.append("* single contributing run; std reported as 0")
    if any(row.missing for row in report.milestones):
        lines.append("")
        lines.append("note: runs without a scored trial at a milestone are excluded there")
    return "\n".join(lines) + "\n"


def _write_report_csv(path, report: MilestoneReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["milestone", "mean", "std", "n", "missing"])
        for row in report.milestones:
            writer.writerow([
                row.t,
                "" if row.mean is None else repr(row.mean),
                "" if row.sample_std is None else repr(row.sample_std),
                row.n,
                row.missing,
            ])


def compare(reports: Sequence[tuple[str, Mapping[str, Any]]]) -> str:
    """Cross-strategy table: rows are milestones, columns strategies, cells
    mean ± std with the best per row marked with asterisks."""
    if not reports:
        raise MilestoneMismatch("no reports to compare")
    milestones = [row["t"] for row in reports[0][1]["milestones"]]
    direction = reports[0][1].get("direction", "maximize")
    for name, rep in reports[1:]:
        if [row["t"] for row in rep["milestones"]] != milestones:
            raise MilestoneMismatch(f"report {name!r} has different milestones")
        if rep.get("direction", "maximize") != direction:
            raise MilestoneMismatch(f"report {name!r} has a different direction")

    names = [name for name, _ in reports]
    header = ["t"] + names
    rows = []
    for i, t in enumerate(milestones):
        cells = []
        means = []
        for _, rep in reports:
            row = rep["milestones"][i]
            means.append(row["mean"])
        valid = [m for m in means if m is not None]
        if valid:
            best = max(valid) if direction == "maximize" else min(valid)
        else:
            best = None
        for (_, rep), mean in zip(reports, means):
            row = rep["milestones"][i]
            if mean is None:
                cells.append("-")
                continue
            cell = f"{mean:.6g} +/- {row['std']:.6g}"
            if best is not None and mean == best:
                cell = f"*{cell}*"
            cells.append(cell)
        rows.append([str(t)] + cells)

    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    out_lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * widths[i] for i in range(len(header))),
    ]
    for r in rows:
        out_lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)))
    out_lines.append("")
    out_lines.append(f"direction: {direction}; best per row marked with *")
    return "\n".join(out_lines) + "\n"
