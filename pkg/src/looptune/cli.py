"""Command-line surface: run experiments, validate plans, regenerate
reports, compare strategies, render the agent prompts and replay persisted
transcripts.

Exit codes: 0 success, 1 configuration or parse error, 2 runtime experiment
failure.
"""
from __future__ import annotations

import argparse
import json
import os
import shlex
import shutil
import sys
from pathlib import Path

import numpy as np

from .creator import TemplateError, build_creator_prompt, render_log_for_creator
from .executor import build_executor_prompt
from .explog import LogError, load_log, milestone_report
from .harness import (
    DEFAULT_MILESTONES,
    ExperimentFailed,
    ExperimentPlan,
    MilestoneMismatch,
    PlanError,
    compare,
    format_report,
    plan_from_dict,
    run_experiment,
)
from .llm import DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL_ENV
from .react import parse_transcript
from .space import SchemaError, sample_uniform
from .tasks import TaskError

DEFAULT_BASE_URL = "https://api.openai.com/v1"


def _fail(code: str, message: str, exit_code: int = 1) -> int:
    print(f"error[{code}]: {message}", file=sys.stderr)
    return exit_code


def _load_plan_with_overrides(args) -> ExperimentPlan:
    path = Path(args.plan)
    if not path.exists():
        raise FileNotFoundError(f"plan not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)

    if getattr(args, "strategy", None):
        obj["strategy"] = args.strategy
    if getattr(args, "trials", None):
        obj["trials_per_run"] = args.trials
    if getattr(args, "runs", None):
        obj["n_runs"] = args.runs
        obj.pop("seeds", None)
    if getattr(args, "seed", None) is not None:
        obj["master_seed"] = args.seed
        obj.pop("seeds", None)
    if getattr(args, "mode", None):
        obj["executor_mode"] = args.mode
    if getattr(args, "out", None):
        obj["output_dir"] = args.out
    if getattr(args, "workers", None):
        obj["workers"] = args.workers
    if getattr(args, "backend", None):
        obj["backend"] = _parse_backend_flag(args.backend)
    return plan_from_dict(obj, base_dir=path.parent)


def _parse_backend_flag(value: str) -> dict:
    if value == "http":
        return {
            "kind": "http",
            "base_url": os.environ.get(DEFAULT_BASE_URL_ENV, DEFAULT_BASE_URL),
            "api_key_env": DEFAULT_API_KEY_ENV,
        }
    if value.startswith("scripted:"):
        return {"kind": "scripted", "transcript_path": value.split(":", 1)[1]}
    if value.startswith("mock:"):
        return {"kind": "programmatic", "strategy": value.split(":", 1)[1]}
    raise PlanError(
        f"unknown --backend {value!r}; expected 'http', 'scripted:<path>' or 'mock:<strategy>'"
    )


def cmd_run(args) -> int:
    try:
        plan = _load_plan_with_overrides(args)
    except FileNotFoundError as e:
        return _fail("plan-not-found", str(e))
    except (PlanError, SchemaError, TaskError, ValueError) as e:
        return _fail("plan-invalid", str(e))
    try:
        outcome = run_experiment(plan)
    except ExperimentFailed as e:
        return _fail("experiment-failed", str(e), exit_code=2)
    print(outcome.report_text, end="")
    print(f"run logs and reports written to {outcome.output_dir}")
    return 0


def cmd_validate(args) -> int:
    """Parse the plan, space and background and dry-run prompt assembly;
    never contacts a backend or runs a trial."""
    try:
        plan = _load_plan_with_overrides(args)
    except FileNotFoundError as e:
        return _fail("plan-not-found", str(e))
    except (PlanError, SchemaError, TaskError, ValueError) as e:
        return _fail("plan-invalid", str(e))
    try:
        build_creator_prompt(plan.background, plan.space)
        build_executor_prompt("validation dry run")
    except TemplateError as e:
        return _fail("template-error", str(e))
    if plan.task.kind == "external":
        command = plan.task.params.get("command", "")
        first = shlex.split(command)[0] if command else ""
        if first and shutil.which(first) is None and not Path(first).exists():
            print(f"warning: external command {first!r} not found "
                  "(checked at runtime, not now)", file=sys.stderr)
    print(f"plan ok: {plan.name}")
    print(f"  task: {plan.task.kind} ({plan.task.direction} {plan.task.goal_metric})")
    print(f"  hyperparameters: {len(plan.space)} ({', '.join(plan.space.names())})")
    print(f"  strategy: {plan.strategy}")
    print(f"  trials per run: {plan.trials_per_run}, runs: {plan.n_runs}")
    print(f"  executor mode: {plan.executor_mode}")
    print(f"  backend: {plan.backend.kind if plan.backend else 'none (not needed)'}")
    return 0


def cmd_render_prompt(args) -> int:
    try:
        plan = _load_plan_with_overrides(args)
    except FileNotFoundError as e:
        return _fail("plan-not-found", str(e))
    except (PlanError, SchemaError, TaskError, ValueError) as e:
        return _fail("plan-invalid", str(e))
    try:
        if args.which == "creator":
            print(build_creator_prompt(plan.background, plan.space))
            if args.log:
                log = load_log(args.log)
                mode = "opro" if plan.strategy == "opro" else "full"
                print("--- rendered experiment history (log tool observation) ---")
                print(render_log_for_creator(log, mode))
        else:
            rng = np.random.default_rng([plan.seeds[0], 1])
            example = sample_uniform(plan.space, rng)
            task_name = (
                "Apply this hyper-parameter configuration by writing it to the "
                f"config file, then train the model: {json.dumps(example)}"
            )
            print(build_executor_prompt(task_name))
    except TemplateError as e:
        return _fail("template-error", str(e))
    except LogError as e:
        return _fail("log-invalid", str(e))
    return 0


def cmd_report(args) -> int:
    log_dir = Path(args.log_dir)
    paths = sorted(log_dir.glob("run_*/log.json")) or sorted(log_dir.glob("*.json"))
    paths = [p for p in paths if p.name not in ("report.json",)]
    if not paths:
        return _fail("no-logs", f"no run logs found under {log_dir}")
    try:
        logs = [load_log(p) for p in paths]
    except LogError as e:
        return _fail("log-invalid", str(e))
    direction = logs[0].metadata.direction
    strategy = logs[0].metadata.strategy or "?"
    max_t = max((len(log.entries) for log in logs), default=1)
    milestones = [t for t in args.milestones if t <= max_t] or [max_t]
    report = milestone_report(logs, milestones, direction)
    print(format_report(report, strategy), end="")
    return 0


def cmd_compare(args) -> int:
    named = []
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as f:
                obj = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            return _fail("report-invalid", f"{path}: {e}")
        named.append((obj.get("strategy", Path(path).stem), obj))
    try:
        print(compare(named), end="")
    except MilestoneMismatch as e:
        return _fail("milestone-mismatch", str(e))
    return 0


def cmd_replay(args) -> int:
    path = Path(args.transcript)
    if not path.exists():
        return _fail("transcript-not-found", f"transcript not found: {path}")
    text = path.read_text(encoding="utf-8")
    steps, final = parse_transcript(text)
    if not steps and final is None:
        return _fail("transcript-invalid", f"no parseable steps in {path}")
    for i, step in enumerate(steps, start=1):
        print(f"step {i}:")
        if step.thought:
            print(f"  thought: {step.thought}")
        print(f"  action: {step.action}")
        print(f"  action input: {step.action_input}")
        if step.observation is not None:
            obs = step.observation if len(step.observation) <= 200 \
                else step.observation[:200] + "..."
            print(f"  observation: {obs}")
    print(f"steps: {len(steps)}")
    if final is not None:
        print(f"final answer: {final}")
    return 0


def _milestone_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="looptune",
        description="Agent-driven hyperparameter optimization with classical baselines.",
        epilog=(
            f"The http backend reads its API key from ${DEFAULT_API_KEY_ENV} "
            f"(override the variable name in the plan) and its base URL from "
            f"${DEFAULT_BASE_URL_ENV} when --backend http is used."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment plan")
    run.add_argument("plan")
    run.add_argument("--strategy", choices=["random", "tpe", "agent", "opro"])
    run.add_argument("--trials", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int, help="master seed; per-run seeds are derived")
    run.add_argument("--backend", help="http | scripted:<path> | mock:bisect-refine")
    run.add_argument("--mode", choices=["direct", "agentic"])
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.set_defaults(func=cmd_run)

    validate = sub.add_parser("validate", help="check a plan without running anything")
    validate.add_argument("plan")
    validate.set_defaults(func=cmd_validate)

    render = sub.add_parser("render-prompt", help="print the exact agent prompt")
    render.add_argument("plan")
    render.add_argument("--which", choices=["creator", "executor"], required=True)
    render.add_argument("--log", help="run log whose rendered history to append")
    render.set_defaults(func=cmd_render_prompt)

    report = sub.add_parser("report", help="regenerate the milestone table from run logs")
    report.add_argument("log_dir")
    report.add_argument("--milestones", type=_milestone_list,
                        default=list(DEFAULT_MILESTONES))
    report.set_defaults(func=cmd_report)

    comp = sub.add_parser("compare", help="cross-strategy milestone table")
    comp.add_argument("reports", nargs="+")
    comp.set_defaults(func=cmd_compare)

    replay = sub.add_parser("replay", help="re-parse a persisted agent transcript")
    replay.add_argument("transcript")
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
