"""The trial executor: four file/subprocess tools, an agentic mode that
drives them through the ReAct loop, and a deterministic direct mode that
performs the same write / train / load / summarize steps without a model."""
from __future__ import annotations

import json
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import react
from .explog import STATUS_FAILED, STATUS_SUCCEEDED, TrialResult
from .llm import CompletionParams
from .space import Config, SearchSpace, ValidationError, validate_config
from .tasks import (
    LogParseError,
    TaskError,
    TaskSpec,
    TrainingTrajectory,
    load_training_log,
    render_trajectory,
    run_task,
)

EXECUTOR_TOOL_NAMES = ("LoadConfigs", "WriteConfigs", "ExecutePythonFile", "LoadTrainingLogs")

EXECUTOR_TEMPLATE = """You are the machine learning experimenter and asked to finish the given objective below. To accomplish the task, you have access to the following tools:

Name: "LoadConfigs"
Description: "Useful for when you need to loading the model training configs and read the content. The file contains the hyper-parameters that used to define the training details of the model."

Name: "WriteConfigs"
Description: "Useful for when you need to writing the changed configs into file. Input should be the hyper-parameters that you want to write into the file IN JSON FORMAT. And you should also keep the unchanged Hyperparameter into the file."

Name: "ExecutePythonFile"
Description: "Useful for when you need to execute the python file to training the model"

Name: "LoadTrainingLogs"
Description: "Useful for when you need to loading the model training logs and read the content. The file contains the training logs (loss, accuracy) generated by training."

Use the following format:

Task: the input task you must solve
Thought: you should always think about what to do
Action: the action to take, should be one of [{tool_names}]
Action Input: the input to the action
Observation: the result of the action
... (this Thought/Action/Action Input/Observation can repeat N times)
Thought: I now know the final answer
Final Answer: the final answer to the original input question

After finish the task, analyze the training logs to make a summary about this experiment, including the analysis of the training trajectory and final training results. Then provide your answer with Final Answer.

Task: {task_name}
Thought:{agent_scratchpad}"""


class ExecutorError(Exception):
    pass


class FileMissing(ExecutorError):
    pass


class Timeout(ExecutorError):
    """The training subprocess exceeded its time budget and was killed."""


class NonZeroExit(ExecutorError):
    def __init__(self, code: int, output: str):
        self.code = code
        self.output = output
        super().__init__(f"training command exited with code {code}: {output[-300:]}")


@dataclass(frozen=True)
class ExecutorEnv:
    """Per-run working files: where the config lives, how training is
    launched and where the training log lands. All paths stay inside the
    run's workdir."""

    workdir: Path
    config_path: Path
    train_command: str
    train_log_path: Path
    timeout: float = 300.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        work = Path(self.workdir).resolve()
        for p in (self.config_path, self.train_log_path):
            resolved = Path(p).resolve()
            if not resolved.is_relative_to(work):
                raise ValueError(f"{p} is outside the workdir {work}")

    @classmethod
    def create(cls, workdir, train_command: str, timeout: float = 300.0) -> "ExecutorEnv":
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        return cls(
            workdir=workdir,
            config_path=workdir / "config.json",
            train_command=train_command,
            train_log_path=workdir / "training_log.json",
            timeout=timeout,
        )


def read_config(env: ExecutorEnv) -> Config:
    if not os.path.exists(env.config_path):
        raise FileMissing(f"config file {env.config_path} does not exist")
    with open(env.config_path, "r", encoding="utf-8") as f:
        content = f.read()
    return json.loads(content) if content.strip() else {}


def write_config(env: ExecutorEnv, config: Config, space: SearchSpace | None = None) -> None:
    """Atomically replace the config file; validates first when a space is given."""
    if space is not None:
        validate_config(space, config, mode="reject")
    fd, tmp = tempfile.mkstemp(dir=env.workdir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(json.dumps(config, indent=1))
        os.replace(tmp, env.config_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_training_command(env: ExecutorEnv) -> str:
    """Launch the training command with {config} and {log} substituted;
    returns the tail of its output on success."""
    cmd = env.train_command.format(
        config=shlex.quote(str(env.config_path)),
        log=shlex.quote(str(env.train_log_path)),
    )
    try:
        proc = subprocess.run(
            shlex.split(cmd),
            capture_output=True,
            text=True,
            timeout=env.timeout,
            cwd=env.workdir,
        )
    except subprocess.TimeoutExpired as e:
        raise Timeout(f"training command exceeded {env.timeout}s and was killed") from e
    except FileNotFoundError as e:
        raise NonZeroExit(127, f"command not found: {e}") from e
    output = _tail((proc.stdout or "") + (proc.stderr or ""))
    if proc.returncode != 0:
        raise NonZeroExit(proc.returncode, output)
    return output


def _tail(text: str, limit: int = 100) -> str:
    lines = text.splitlines()
    return "\n".join(lines[-limit:])


# --- tools --------------------------------------------------------------------

def tool_load_configs(env: ExecutorEnv) -> str:
    if not os.path.exists(env.config_path):
        raise FileMissing(f"config file {env.config_path} does not exist")
    with open(env.config_path, "r", encoding="utf-8") as f:
        return f.read()


def tool_write_configs(env: ExecutorEnv, input_text: str, space: SearchSpace) -> str:
    """Merge the JSON input over the existing config (unchanged keys are
    preserved), validate the merged config, and write it atomically.
    Parse and validation problems come back as observation text so the
    agent can retry."""
    try:
        incoming = json.loads(input_text)
        if not isinstance(incoming, dict):
            raise ValueError("input must be a JSON object")
    except ValueError as e:
        return f"ParseError: input is not a JSON object of hyper-parameters ({e})"
    try:
        existing = read_config(env)
    except FileMissing:
        existing = {}
    merged = {**existing, **incoming}
    try:
        validate_config(space, merged, mode="reject")
    except ValidationError as e:
        return f"ValidationError: {e}"
    write_config(env, merged)
    changed = sorted(k for k in incoming if existing.get(k) != incoming[k])
    return (
        f"Configs written. Changed keys: {', '.join(changed) if changed else '(none)'}. "
        f"File now holds {len(merged)} hyper-parameters."
    )


def tool_execute_training(env: ExecutorEnv) -> str:
    output = run_training_command(env)
    return "training completed\n" + output if output else "training completed"


def tool_load_training_logs(env: ExecutorEnv, goal_metric: str | None = None) -> str:
    if not os.path.exists(env.train_log_path):
        raise FileMissing(f"training log {env.train_log_path} does not exist")
    traj = load_training_log(env.train_log_path)
    return render_trajectory(traj, goal_metric)


def make_executor_tools(env: ExecutorEnv, space: SearchSpace,
                        goal_metric: str | None = None) -> list[react.ToolSpec]:
    def wrap(fn: Callable[[str], str]) -> Callable[[str], str]:
        def handler(input_text: str) -> str:
            try:
                return fn(input_text)
            except (ExecutorError, LogParseError) as e:
                return f"{type(e).__name__}: {e}"
        return handler

    return [
        react.ToolSpec("LoadConfigs", "read the current training config file",
                       wrap(lambda _: tool_load_configs(env))),
        react.ToolSpec("WriteConfigs", "merge JSON hyper-parameters into the config file",
                       wrap(lambda text: tool_write_configs(env, text, space))),
        react.ToolSpec("ExecutePythonFile", "run the training command",
                       wrap(lambda _: tool_execute_training(env))),
        react.ToolSpec("LoadTrainingLogs", "read and render the training log",
                       wrap(lambda _: tool_load_training_logs(env, goal_metric))),
    ]


def build_executor_prompt(task_name: str, tool_names=EXECUTOR_TOOL_NAMES) -> str:
    return EXECUTOR_TEMPLATE.format(
        tool_names=", ".join(tool_names),
        task_name=task_name,
        agent_scratchpad="",
    )


# --- trajectory summary ---------------------------------------------------------

@dataclass(frozen=True)
class SummaryThresholds:
    """Tunable flag thresholds for the deterministic trajectory summary."""

    overfit_rel: float = 0.01      # relative val worsening from its peak
    train_trend_tol: float = 0.01  # relative train slack allowed over the window
    plateau_abs: float = 0.001     # absolute val movement over the window
    nonconv_frac: float = 0.9      # final train loss vs initial


def _is_loss(name: str) -> bool:
    return "loss" in name.lower()


def _pick_series(traj: TrainingTrajectory):
    """Choose the validation-metric, train-metric and train-loss series."""
    names = list(traj.metrics)
    val = next((n for n in names if n.startswith("val") and not _is_loss(n)), None)
    train = None
    if val is not None:
        counterpart = "train" + val[3:]
        train = counterpart if counterpart in traj.metrics else next(
            (n for n in names if n.startswith("train") and not _is_loss(n)), None)
    if val is None:
        val = next((n for n in names if not _is_loss(n)), names[0])
    train_loss = next((n for n in names if n.startswith("train") and _is_loss(n)), None)
    return val, train, train_loss


def summarize_trajectory(traj: TrainingTrajectory, direction: str,
                         thresholds: SummaryThresholds = SummaryThresholds()) -> str:
    """Deterministic prose summary of a trajectory: final score, best epoch,
    and overfitting / non-convergence / plateau flags."""
    val_name, train_name, train_loss_name = _pick_series(traj)
    val = traj.metrics[val_name]
    n = len(val)
    val_minimize = _is_loss(val_name) or (train_name is None and direction == "minimize")

    if val_minimize:
        best_i = min(range(n), key=lambda i: val[i])
    else:
        best_i = max(range(n), key=lambda i: val[i])
    best_epoch = traj.epochs[best_i]

    lines = [
        f"Final {val_name} {traj.final_metric:g}; best {val_name} {val[best_i]:g} at epoch {best_epoch}.",
    ]
    flags = []

    if n >= 3:
        w_start = n - max(1, n // 3)
        peak = val[best_i]
        worsening = (val[-1] - peak) if val_minimize else (peak - val[-1])
        rel_worse = worsening / abs(peak) if peak != 0 else worsening
        if train_name is not None and rel_worse > thresholds.overfit_rel:
            train = traj.metrics[train_name]
            ref = train[w_start]
            drift = (train[-1] - ref) / abs(ref) if ref != 0 else train[-1] - ref
            train_holds = drift >= -thresholds.train_trend_tol if not _is_loss(train_name) \
                else drift <= thresholds.train_trend_tol
            if train_holds:
                flags.append(
                    f"the model shows signs of overfitting: {val_name} fell "
                    f"{100 * rel_worse:.1f}% from its peak while {train_name} kept improving"
                )
        window = val[w_start:]
        if max(window) - min(window) < thresholds.plateau_abs:
            flags.append(f"{val_name} plateaued over the last third of training")

    if train_loss_name is not None and n >= 2:
        tl = traj.metrics[train_loss_name]
        if tl[0] > 0 and tl[-1] > thresholds.nonconv_frac * tl[0]:
            flags.append(
                f"training did not converge: final {train_loss_name} is still "
                f"{100 * tl[-1] / tl[0]:.0f}% of its initial value"
            )

    if flags:
        lines.extend(flag[0].upper() + flag[1:] + "." for flag in flags)
    else:
        lines.append("No training anomalies detected.")
    return " ".join(lines)


# --- trial execution -------------------------------------------------------------

def execute(
    config: Config,
    env: ExecutorEnv,
    space: SearchSpace,
    task: TaskSpec,
    mode: str = "direct",
    backend=None,
    params: CompletionParams | None = None,
    seed: int = 0,
    max_steps: int = 15,
    transcript_sink: Callable[[str], None] | None = None,
) -> TrialResult:
    """Run one trial.

    Direct mode performs write / train / load / summarize deterministically.
    Agentic mode seeds the ReAct loop with the four tools and the "apply
    this config and train" task; the score still comes from the training-log
    file, never from the model's prose. Training failures become a failed
    TrialResult rather than an exception; backend failures propagate.
    """
    if mode == "direct":
        return _execute_direct(config, env, space, task, seed)
    if mode != "agentic":
        raise ValueError(f"unknown executor mode {mode!r}")
    if backend is None or params is None:
        raise ValueError("agentic mode requires a backend and completion params")
    return _execute_agentic(config, env, space, task, backend, params, max_steps, transcript_sink)


def _execute_direct(config, env, space, task, seed) -> TrialResult:
    write_config(env, config, space)
    try:
        traj = run_task(task, config, env, seed)
    except (TaskError, ExecutorError) as e:
        return TrialResult(
            status=STATUS_FAILED, final_score=None,
            analysis_text=f"trial failed: {type(e).__name__}: {e}",
        )
    analysis = summarize_trajectory(traj, task.direction)
    return TrialResult(
        status=STATUS_SUCCEEDED,
        final_score=traj.final_metric,
        analysis_text=analysis,
        trajectory=traj,
    )


def _execute_agentic(config, env, space, task, backend, params, max_steps,
                     transcript_sink) -> TrialResult:
    task_name = (
        "Apply this hyper-parameter configuration by writing it to the config "
        f"file, then train the model: {json.dumps(config)}"
    )
    prompt = build_executor_prompt(task_name)
    tools = make_executor_tools(env, space, goal_metric=task.goal_metric)
    try:
        outcome = react.run_loop(backend, params, prompt, tools=tools, max_steps=max_steps)
    except react.StepBudgetExceeded as e:
        return TrialResult(
            status=STATUS_FAILED, final_score=None,
            analysis_text=f"trial failed: agent exceeded its step budget ({e})",
        )
    if transcript_sink is not None:
        transcript_sink(react.format_transcript(outcome))

    try:
        applied = read_config(env)
    except FileMissing:
        applied = None
    if applied != config:
        # Restore the requested configuration so the on-disk record matches the
        # proposal this trial was asked to evaluate.
        write_config(env, config)
        return TrialResult(
            status=STATUS_FAILED, final_score=None,
            analysis_text="trial failed: agent applied a configuration different "
                          "from the requested one",
        )
    if not os.path.exists(env.train_log_path):
        return TrialResult(
            status=STATUS_FAILED, final_score=None,
            analysis_text="trial failed: no training log was produced",
        )
    try:
        traj = load_training_log(env.train_log_path)
    except LogParseError as e:
        return TrialResult(
            status=STATUS_FAILED, final_score=None,
            analysis_text=f"trial failed: {e}",
        )
    return TrialResult(
        status=STATUS_SUCCEEDED,
        final_score=traj.final_metric,
        analysis_text=outcome.final_answer,
        trajectory=traj,
    )
