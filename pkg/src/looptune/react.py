"""Zero-shot ReAct loop: parse Thought/Action/Action Input/Final Answer
blocks from model replies, dispatch registered tools, and grow a scratchpad
until the model emits a final answer or the step budget runs out."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .llm import ChatMessage, CompletionParams

THOUGHT = "Thought:"
ACTION = "Action:"
ACTION_INPUT = "Action Input:"
FINAL_ANSWER = "Final Answer:"
OBSERVATION = "Observation:"

_MARKER = re.compile(r"^\s*(Thought:|Action:|Action Input:|Final Answer:)", re.MULTILINE)

FORMAT_CORRECTION = (
    "Your reply did not follow the required format. Reply with either "
    "'Action:' and 'Action Input:' lines naming one of the available tools, "
    "or a 'Final Answer:' line."
)


class StepBudgetExceeded(Exception):
    """The loop hit max_steps (or repeated format failures) without a final answer."""

    def __init__(self, message: str, transcript: list["ReActStep"] | None = None):
        super().__init__(message)
        self.transcript = transcript or []


@dataclass(frozen=True)
class ToolSpec:
    """A named capability the agent may invoke; the handler maps an input
    text to an observation text (raise ToolError to report a failure)."""

    name: str
    description: str
    handler: Callable[[str], str]


class ToolError(Exception):
    """Raised by a tool handler; rendered as the step's observation."""


@dataclass
class ReActStep:
    thought: str
    action: str
    action_input: str
    observation: str | None = None


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    thought: str = ""


@dataclass(frozen=True)
class ParseFailure:
    reason: str


@dataclass
class AgentOutcome:
    final_answer: str
    transcript: list[ReActStep] = field(default_factory=list)
    steps_used: int = 0
    final_thought: str = ""
    conversation: str = ""  # full prompt text of the last request, scratchpad included


def _find_marker(text: str, marker: str) -> tuple[int, int] | None:
    """Locate ``marker`` at the start of a line (leading whitespace allowed);
    returns (line_start_of_marker, index_just_past_marker)."""
    pattern = re.compile(r"^[ \t]*" + re.escape(marker), re.MULTILINE)
    m = pattern.search(text)
    if m is None:
        return None
    return m.start(), m.end()


def _capture_thought(text: str, end: int) -> str:
    """Text after the first Thought: marker up to the next marker line."""
    found = _find_marker(text, THOUGHT)
    if found is None:
        return ""
    _, after = found
    scope = text[after:end] if end > after else text[after:]
    nxt = _MARKER.search(scope)
    if nxt is not None:
        scope = scope[: nxt.start()]
    return scope.strip()


def parse_block(text: str) -> ReActStep | FinalAnswer | ParseFailure:
    """Parse one model reply.

    Markers are case-sensitive and matched at line start (leading
    whitespace allowed). A block containing ``Final Answer:`` yields a
    FinalAnswer with everything after the marker; otherwise both
    ``Action:`` and ``Action Input:`` are required (Thought optional) and
    the action input runs to the end of the text. Anything else is a
    ParseFailure, so the caller can reprompt.
    """
    final = _find_marker(text, FINAL_ANSWER)
    if final is not None:
        start, after = final
        return FinalAnswer(text=text[after:].strip(), thought=_capture_thought(text, start))

    action = _find_marker(text, ACTION)
    if action is None:
        return ParseFailure("no Action or Final Answer marker found")
    action_start, action_after = action
    action_line_end = text.find("\n", action_after)
    if action_line_end == -1:
        action_line_end = len(text)
    action_name = text[action_after:action_line_end].strip()

    action_input = _find_marker(text[action_line_end:], ACTION_INPUT)
    if action_input is None:
        return ParseFailure("Action present but no Action Input marker found")
    _, input_after_rel = action_input
    input_text = text[action_line_end + input_after_rel:].strip()

    return ReActStep(
        thought=_capture_thought(text, action_start),
        action=action_name,
        action_input=input_text,
    )


def format_step(step: ReActStep, include_observation: bool = True) -> str:
    """Render a step back into marker text: the inverse of parse_block on
    well-formed steps."""
    parts = []
    if step.thought:
        parts.append(f"{THOUGHT} {step.thought}")
    parts.append(f"{ACTION} {step.action}")
    parts.append(f"{ACTION_INPUT} {step.action_input}")
    if include_observation and step.observation is not None:
        parts.append(f"{OBSERVATION} {step.observation}")
    return "\n".join(parts)


def run_loop(
    backend,
    params: CompletionParams,
    system_prompt: str,
    scratchpad_seed: str = "",
    tools: Sequence[ToolSpec] = (),
    max_steps: int = 15,
    max_format_retries: int = 2,
) -> AgentOutcome:
    """Drive the ReAct loop until a final answer.

    Each request sends the entire prompt (system text plus the full
    scratchpad so far) as a single user message; observations are never
    dropped. Tool steps count toward ``max_steps``; malformed replies get
    up to ``max_format_retries`` corrective re-requests each. A reply of
    ``Action: Final Answer`` is treated as a final answer with the action
    input as its text (the prompt templates advertise that form).
    """
    registry = {t.name: t for t in tools}
    if len(registry) != len(tools):
        raise ValueError("tool names must be unique")
    scratchpad = scratchpad_seed
    transcript: list[ReActStep] = []
    steps_used = 0
    format_failures = 0

    while True:
        prompt = system_prompt + scratchpad
        messages = [ChatMessage(role="user", content=prompt)]
        reply = backend.complete(messages, params)
        parsed = parse_block(reply)

        if isinstance(parsed, ReActStep) and parsed.action == "Final Answer":
            parsed = FinalAnswer(text=parsed.action_input, thought=parsed.thought)

        if isinstance(parsed, FinalAnswer):
            return AgentOutcome(
                final_answer=parsed.text,
                transcript=transcript,
                steps_used=steps_used,
                final_thought=parsed.thought,
                conversation=prompt,
            )

        if isinstance(parsed, ParseFailure):
            format_failures += 1
            if format_failures > max_format_retries:
                raise StepBudgetExceeded(
                    f"reply format failed {format_failures} times: {parsed.reason}",
                    transcript,
                )
            scratchpad += f"\n{OBSERVATION} {FORMAT_CORRECTION}\n{THOUGHT} "
            continue

        format_failures = 0
        if steps_used >= max_steps:
            raise StepBudgetExceeded(f"no final answer within {max_steps} steps", transcript)
        steps_used += 1

        step: ReActStep = parsed
        tool = registry.get(step.action)
        if tool is None:
            step.observation = (
                f"Unknown tool {step.action!r}. Valid tools: {', '.join(registry) or '(none)'}"
            )
        else:
            try:
                step.observation = tool.handler(step.action_input)
            except ToolError as e:
                step.observation = str(e)
        transcript.append(step)
        scratchpad += "\n" + format_step(step) + f"\n{THOUGHT} "


def format_transcript(outcome: AgentOutcome) -> str:
    """Persistable text form of a finished loop: the dispatched steps in
    order followed by the final answer."""
    blocks = [format_step(s) for s in outcome.transcript]
    tail = []
    if outcome.final_thought:
        tail.append(f"{THOUGHT} {outcome.final_thought}")
    tail.append(f"{FINAL_ANSWER} {outcome.final_answer}")
    blocks.append("\n".join(tail))
    return "\n\n".join(blocks)


def parse_transcript(text: str) -> tuple[list[ReActStep], str | None]:
    """Re-parse a persisted transcript through the block parser.

    Returns the recovered steps (with observations) and the final answer
    text, for auditing a run after the fact.
    """
    lines = text.splitlines()
    steps: list[ReActStep] = []
    final: str | None = None
    block: list[str] = []
    obs: list[str] | None = None

    def flush():
        nonlocal block, obs
        if not block:
            obs = None
            return
        parsed = parse_block("\n".join(block))
        if isinstance(parsed, ReActStep):
            if obs is not None:
                parsed.observation = "\n".join(obs).strip()
            steps.append(parsed)
        elif isinstance(parsed, FinalAnswer):
            nonlocal final
            final = parsed.text
        block = []
        obs = None

    for line in lines:
        stripped = line.lstrip()
        if stripped.startswith(OBSERVATION):
            obs = [stripped[len(OBSERVATION):].strip()]
        elif obs is not None and not _MARKER.match(line):
            obs.append(line)
        else:
            if obs is not None and _MARKER.match(line):
                flush()
            block.append(line)
    flush()
    return steps, final
