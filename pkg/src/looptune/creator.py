"""The proposal agent: builds its prompt from task background information,
reads the experiment history through a log tool, extracts (config, rationale)
proposals from free-text final answers, and writes the end-of-run analysis."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from . import react
from .explog import ExperimentLog, FinalAnalysis, best_so_far
from .llm import ChatMessage, CompletionParams, LlmError
from .space import Config, SearchSpace, ValidationError, describe_for_prompt, sample_uniform, validate_config
from .tasks import render_trajectory

CREATOR_TOOL_NAMES = ("LoadHistoricalTrainingLogs",)

CREATOR_TEMPLATE = """You are a task creation AI expert in machine learning that required to optimize the model's hyperparameter settings to accomplish the final objective. To achieve this, you need to check the previous hyperparameter tuning plan and completed tasks results. Based on this information, generate a new sub-task for the task execution agent that can solve the sub-task. Below is the basic information about the experimental settings:

{model_info}

{dataset_info}

Below are the hyper-parameters and corresponding candidates or values range that can be tuned for the task:

{hyperparameter_info}

To accomplish the task, you have access to the following tools:

Name: "LoadHistoricalTrainingLogs"
Description: "This tool is designed for easily loading and reviewing model training logs. It automatically accesses records of loss and accuracy metrics from different hyper-parameter settings."

Format your response as follows:

Objective: Define the final goal
Thought: Describe your reasoning process
Action: Specify the action to take; valid actions are 'Final Answer' or {tool_names}
Action Input: Input for the action
Observation: Outcome of the action
... (this Thought/Action/Action Input/Observation can repeat N times)
Thought: I now know the final answer
Final Answer: The proposed hyper-parameters for the task

Analyze the completed tasks and their outcomes. Propose a new task focused on unexplored hyperparameter spaces or optimization techniques to methodically reach the final objective. The task executor will adjust hyperparameters and run the training script. Ensure your proposed hyperparameters are distinct from those previously tested, and state your recommendation as the 'Final Answer'.

Objective: {optim_goal}
Thought: {agent_scratchpad}"""

# Output-encoding hint appended after the template so the template itself
# stays byte-identical for fidelity checks.
OUTPUT_ENCODING_NOTE = (
    "End your Final Answer with a single JSON object mapping every "
    "hyper-parameter name to its proposed value."
)

ANALYSIS_HEADERS = (
    "Best Hyper-Parameter Found in Experiment",
    "Influence of Each Hyper-Parameter",
    "Potential Future Exploration Direction",
)

EMPTY_LOG_SENTINEL = "No experiments recorded yet."


class TemplateError(Exception):
    pass


class ProposalError(Exception):
    pass


class EmptyLog(Exception):
    pass


@dataclass(frozen=True)
class OptimizationGoal:
    metric_name: str
    direction: str  # maximize | minimize
    goal_text: str

    def __post_init__(self):
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"direction must be maximize or minimize, got {self.direction!r}")


@dataclass(frozen=True)
class BackgroundInfo:
    """The four text sections the proposal agent is initialized with."""

    model_info: str
    dataset_info: str
    optimization_goal: OptimizationGoal
    hp_info: str = ""  # rendered search-space description; derived from the space when empty


@dataclass
class Proposal:
    config: Config
    rationale: str
    prompt_snapshot: str = ""   # full prompt of the last request, log observation included
    transcript_text: str = ""


def build_creator_prompt(background: BackgroundInfo, space: SearchSpace,
                         tool_names=CREATOR_TOOL_NAMES) -> str:
    """Render the proposal agent's system prompt; deterministic."""
    hp_info = background.hp_info or describe_for_prompt(space)
    sections = {
        "model_info": background.model_info,
        "dataset_info": background.dataset_info,
        "hyperparameter_info": hp_info,
        "optim_goal": background.optimization_goal.goal_text if background.optimization_goal else "",
    }
    for name, value in sections.items():
        if not value:
            raise TemplateError(f"background section {name!r} is empty")
    try:
        rendered = CREATOR_TEMPLATE.format(
            tool_names=", ".join(tool_names),
            agent_scratchpad="",
            **sections,
        )
    except (KeyError, IndexError) as e:
        raise TemplateError(f"unfilled template placeholder: {e}") from e
    return rendered + "\n\n" + OUTPUT_ENCODING_NOTE + "\n"


def render_log_for_creator(log: ExperimentLog, mode: str = "full") -> str:
    """Render the experiment history the way the proposal agent sees it.

    Full mode shows, per trial: the configuration, its rationale, the
    trajectory, the analysis text and the final score. Opro mode shows only
    (configuration, score) pairs sorted by score ascending.
    """
    if mode not in ("full", "opro"):
        raise ValueError(f"unknown log render mode {mode!r}")
    if not log.entries:
        return EMPTY_LOG_SENTINEL

    if mode == "opro":
        lines = ["Previously evaluated configurations and their scores, sorted by score:"]
        failed = [e for e in log.entries if e.result.final_score is None]
        scored = [e for e in log.entries if e.result.final_score is not None]
        for entry in failed:
            lines.append(f"{json.dumps(entry.config)} -> failed")
        for entry in sorted(scored, key=lambda e: e.result.final_score):
            lines.append(f"{json.dumps(entry.config)} -> score {entry.result.final_score!r}")
        return "\n".join(lines)

    blocks = []
    for entry in log.entries:
        lines = [
            f"Experiment {entry.trial_index}:",
            f"Hyper-parameters: {json.dumps(entry.config)}",
            f"Rationale: {entry.rationale}",
        ]
        if entry.result.trajectory is not None:
            lines.append("Training Trajectory:")
            lines.append(render_trajectory(entry.result.trajectory))
        if entry.result.analysis_text:
            lines.append(f"Analysis: {entry.result.analysis_text}")
        if entry.result.final_score is not None:
            lines.append(f"Final Score: {entry.result.final_score!r}")
        else:
            lines.append("Status: failed")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


# --- final-answer extraction ----------------------------------------------------

_FENCED = re.compile(r"```(?:json)?\s*([\s\S]*?)```")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _json_candidates(text: str):
    for m in _FENCED.finditer(text):
        yield m.group(1), m.span()
    depth, start, in_string, escape = 0, -1, False, False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                yield text[start:i + 1], (start, i + 1)


def _coerce_value(raw: str):
    raw = raw.strip().rstrip(",").strip()
    raw = re.sub(r"\s+(#|//).*$", "", raw).strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
        raw = raw[1:-1]
    if _NUMBER.match(raw):
        value = float(raw)
        return int(value) if re.fullmatch(r"[+-]?\d+", raw) else value
    return raw


def parse_final_answer(text: str, space: SearchSpace) -> tuple[Config | None, str]:
    """Pull hyperparameter assignments out of a free-text final answer.

    Tries fenced or bare JSON objects first, then falls back to
    ``name: value`` lines restricted to known hyperparameter names. Returns
    the assignments (or None) and the surrounding prose with the matched
    part removed.
    """
    for candidate, span in _json_candidates(text):
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict):
            continue
        config = {k: v for k, v in obj.items() if k in space}
        if config:
            prose = (text[:span[0]] + text[span[1]:]).strip()
            return config, prose

    config = {}
    kept_lines = []
    line_re = re.compile(
        r"""^\s*[-*]?\s*["']?(?P<name>[A-Za-z_][\w.]*)["']?\s*[:=]\s*(?P<value>.+?)\s*$"""
    )
    for line in text.splitlines():
        m = line_re.match(line)
        if m and m.group("name") in space:
            config[m.group("name")] = _coerce_value(m.group("value"))
        else:
            kept_lines.append(line)
    if config:
        return config, "\n".join(kept_lines).strip()
    return None, text.strip()


def _is_duplicate(config: Config, log: ExperimentLog) -> bool:
    return any(entry.config == config for entry in log.entries)


def _resample_one(space: SearchSpace, config: Config, log: ExperimentLog,
                  rng: np.random.Generator) -> Config:
    """Make the config distinct from every logged one by re-drawing a single
    hyperparameter, starting from the lowest index."""
    out = dict(config)
    for spec in space:
        for _ in range(25):
            fresh = sample_uniform(space, rng)
            out[spec.name] = fresh[spec.name]
            if not _is_duplicate(out, log):
                return out
    return out


def repair_config(space: SearchSpace, candidate: Config, log: ExperimentLog,
                  rng: np.random.Generator) -> Config:
    """Deterministic (seeded) repair: clamp out-of-range numerics, replace
    invalid choices with the first choice, sample missing values, then
    resample away from logged duplicates."""
    repaired: Config = {}
    for spec in space:
        value = candidate.get(spec.name)
        if value is not None and spec.contains(value):
            repaired[spec.name] = value
            continue
        if spec.is_numeric and isinstance(value, (int, float)) and not isinstance(value, bool):
            clipped = min(max(float(value), spec.lower), spec.upper)
            repaired[spec.name] = int(round(clipped)) if spec.kind == "integer" else clipped
        elif not spec.is_numeric and value is not None:
            repaired[spec.name] = spec.choices[0]
        else:
            repaired[spec.name] = sample_uniform(space, rng)[spec.name]
    if _is_duplicate(repaired, log):
        repaired = _resample_one(space, repaired, log, rng)
    return repaired


@dataclass
class Creator:
    """Proposal agent bound to one backend, one set of background info and
    one log rendering mode (full history, or score pairs only)."""

    backend: object
    params: CompletionParams
    background: BackgroundInfo
    log_mode: str = "full"
    max_steps: int = 15

    def _log_tool(self, log: ExperimentLog) -> react.ToolSpec:
        return react.ToolSpec(
            "LoadHistoricalTrainingLogs",
            "load the experiment history",
            lambda _: render_log_for_creator(log, self.log_mode),
        )

    def _run(self, prompt: str, log: ExperimentLog, scratchpad: str = "") -> react.AgentOutcome:
        try:
            return react.run_loop(
                self.backend, self.params, prompt,
                scratchpad_seed=scratchpad,
                tools=[self._log_tool(log)],
                max_steps=self.max_steps,
            )
        except (LlmError, react.StepBudgetExceeded) as e:
            raise ProposalError(f"backend failed to produce a proposal: {e}") from e

    def create(self, log: ExperimentLog, space: SearchSpace,
               rng: np.random.Generator) -> Proposal:
        """Ask for the next configuration.

        The reply's final answer is parsed into assignments and validated;
        on a validation failure or an exact duplicate of a logged config the
        agent is reprompted once with the problem stated, and a second
        failure is repaired deterministically.
        """
        prompt = build_creator_prompt(self.background, space)
        outcome = self._run(prompt, log)
        candidate, prose = parse_final_answer(outcome.final_answer, space)

        problem = self._problem_with(candidate, space, log)
        if problem is not None:
            correction = (
                f"\nObservation: {problem} Propose a different, valid configuration "
                "and state it as a new Final Answer.\nThought: "
            )
            scratchpad = f"Final Answer: {outcome.final_answer}{correction}"
            retry = self._run(prompt, log, scratchpad=scratchpad)
            candidate2, prose2 = parse_final_answer(retry.final_answer, space)
            if self._problem_with(candidate2, space, log) is None:
                outcome, candidate, prose = retry, candidate2, prose2
            else:
                base = candidate2 if candidate2 is not None else candidate
                if base is None:
                    raise ProposalError("final answer contained no recognizable assignments")
                outcome = retry
                prose = prose2 if candidate2 is not None else prose
                candidate = repair_config(space, base, log, rng)

        config = validate_config(space, candidate, mode="reject")
        rationale = prose or self._gather_thoughts(outcome) or "n/a"
        return Proposal(
            config=config,
            rationale=rationale,
            prompt_snapshot=outcome.conversation,
            transcript_text=react.format_transcript(outcome),
        )

    def _problem_with(self, candidate: Config | None, space: SearchSpace,
                      log: ExperimentLog) -> str | None:
        if candidate is None:
            return "Your Final Answer did not contain recognizable hyper-parameter assignments."
        try:
            validate_config(space, candidate, mode="reject")
        except ValidationError as e:
            return f"Your proposal is invalid: {e}."
        if _is_duplicate(candidate, log):
            return "Your proposal exactly duplicates a previously tested configuration."
        return None

    @staticmethod
    def _gather_thoughts(outcome: react.AgentOutcome) -> str:
        thoughts = [s.thought for s in outcome.transcript if s.thought]
        if outcome.final_thought:
            thoughts.append(outcome.final_thought)
        return " ".join(thoughts)

    def analyze(self, log: ExperimentLog, direction: str) -> FinalAnalysis:
        """Compute the best configuration locally and ask the backend for the
        three prose sections; the local best always wins disagreements."""
        best = best_so_far(log, max(len(log.entries), 1), direction)
        if best is None:
            raise EmptyLog("cannot analyze a log with no scored trials")
        best_entry = log.entries[best.trial_index - 1]

        request = (
            "All experiments are complete. Review the experimental logs below and "
            "write the final analysis in exactly three sections titled:\n"
            f"1. {ANALYSIS_HEADERS[0]}:\n2. {ANALYSIS_HEADERS[1]}:\n3. {ANALYSIS_HEADERS[2]}:\n\n"
            "Experimental Logs:\n" + render_log_for_creator(log, "full")
        )
        try:
            response = self.backend.complete(
                [ChatMessage(role="user", content=request)], self.params
            )
        except LlmError as e:
            raise ProposalError(f"backend failed to produce the final analysis: {e}") from e

        sections = _split_sections(response)
        reasoning = sections[0] if sections else response.strip()
        claimed, _ = parse_final_answer(reasoning, _NameSet(set(best_entry.config)))
        if claimed and any(best_entry.config.get(k) != v for k, v in claimed.items()):
            reasoning += (
                "\n[Note: the configuration named above disagrees with the recorded "
                f"scores; the best logged configuration is trial {best.trial_index}: "
                f"{json.dumps(best_entry.config)}.]"
            )
        return FinalAnalysis(
            best_config=dict(best_entry.config),
            best_reasoning=reasoning,
            influence_notes=sections[1] if len(sections) > 1 else "",
            future_directions=sections[2] if len(sections) > 2 else "",
        )


def _split_sections(text: str) -> list[str]:
    positions = []
    for header in ANALYSIS_HEADERS:
        idx = text.find(header)
        if idx == -1:
            return []
        positions.append(idx)
    if positions != sorted(positions):
        return []
    sections = []
    for i, start in enumerate(positions):
        end = positions[i + 1] if i + 1 < len(positions) else len(text)
        body = text[start:end]
        sections.append(body.strip())
    return sections


@dataclass(frozen=True)
class _NameSet:
    """Minimal name-membership stand-in so answer extraction can run against
    a config's keys when no full space is at hand."""

    names: frozenset | set = field(default_factory=set)

    def __contains__(self, name: str) -> bool:
        return name in self.names
