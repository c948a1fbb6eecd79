"""Chat-completion backends: a real OpenAI-compatible HTTP client plus two
deterministic mocks (scripted playback and a programmatic proposal policy)
used for testing the agent loop end to end without a model."""
from __future__ import annotations

import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import requests

DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"
DEFAULT_BASE_URL_ENV = "OPENAI_BASE_URL"

ROLES = ("system", "user", "assistant")


class LlmError(Exception):
    pass


class NetworkError(LlmError):
    """Transport-level failure (connection refused, timeout)."""


class ApiError(LlmError):
    """Non-2xx HTTP response; carries the status code and a body excerpt."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body[:500]
        super().__init__(f"HTTP {status}: {self.body}")

    @property
    def retryable(self) -> bool:
        return self.status == 429 or self.status >= 500


class TranscriptExhausted(LlmError):
    """A scripted backend was asked for more replies than its transcript holds."""


class MalformedResponse(LlmError):
    """The endpoint replied 2xx but without choices[0].message.content."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class CompletionParams:
    model: str = "gpt-3.5-turbo-1106"
    temperature: float = 1.0
    max_tokens: int | None = None
    request_timeout: float = 120.0

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive when bounded")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def with_retry(operation: Callable[[], object], policy: RetryPolicy, sleep=time.sleep):
    """Run ``operation``, retrying on NetworkError and retryable ApiError
    (429/5xx) with exponential backoff: delay = base_delay * 2^attempt."""
    last_error: Exception | None = None
    for attempt in range(policy.max_attempts):
        try:
            return operation()
        except NetworkError as e:
            last_error = e
        except ApiError as e:
            if not e.retryable:
                raise
            last_error = e
        if attempt + 1 < policy.max_attempts:
            sleep(policy.base_delay * (2 ** attempt))
    assert last_error is not None
    raise last_error


class HttpBackend:
    """OpenAI-compatible chat-completions client.

    The API key comes from an environment variable (``api_key_env``,
    default OPENAI_API_KEY) and is never logged or persisted. The request
    body contains exactly model, messages, temperature and (when bounded)
    max_tokens.
    """

    def __init__(self, base_url: str, api_key_env: str = DEFAULT_API_KEY_ENV,
                 retry: RetryPolicy = RetryPolicy(), session: requests.Session | None = None):
        if not re.match(r"^https?://", base_url):
            raise ValueError(f"base_url must be an http(s) URL, got {base_url!r}")
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.retry = retry
        self._session = session or requests.Session()

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        body: dict = {
            "model": params.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        def request_once():
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    data=json.dumps(body),
                    headers=headers,
                    timeout=params.request_timeout,
                )
            except requests.RequestException as e:
                raise NetworkError(str(e)) from e
            if not 200 <= resp.status_code < 300:
                raise ApiError(resp.status_code, resp.text)
            return resp

        resp = with_retry(request_once, self.retry)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"response missing choices[0].message.content: {e}") from e
        if not isinstance(content, str):
            raise MalformedResponse(f"message content is not text: {type(content).__name__}")
        return content


class ScriptedBackend:
    """Plays back a fixed transcript of assistant replies, one per call.

    Fully deterministic; the call counter belongs to this instance, so use
    one instance per run session.
    """

    def __init__(self, transcript: Sequence[str]):
        if not transcript:
            raise ValueError("scripted transcript must be non-empty")
        self._transcript = list(transcript)
        self._calls = 0

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        if self._calls >= len(self._transcript):
            raise TranscriptExhausted(
                f"transcript has {len(self._transcript)} replies, call {self._calls + 1} requested"
            )
        reply = self._transcript[self._calls]
        self._calls += 1
        return reply

    @property
    def calls_made(self) -> int:
        return self._calls


# --- programmatic mock ------------------------------------------------------

_HP_LINE = re.compile(
    r"^- (?P<name>\S+) \((?P<kind>float|integer)(?P<log>, log scale)?\) in "
    r"\[(?P<lo>[^,\]]+), (?P<hi>[^\]]+)\]",
    re.MULTILINE,
)
_CHOICE_LINE = re.compile(
    r"^- (?P<name>\S+) \((?P<kind>categorical|ordinal)\), one of \[(?P<choices>[^\]]*)\]",
    re.MULTILINE,
)
_LOGGED_PAIR = re.compile(
    r"^Hyper-parameters: (?P<config>\{.*\})$"
    r"(?:(?!^Hyper-parameters:)[\s\S])*?"
    r"^Final Score: (?P<score>[-+0-9.eE]+)$",
    re.MULTILINE,
)
_OPRO_PAIR = re.compile(r"^(?P<config>\{.*\}) -> score (?P<score>[-+0-9.eE]+)$", re.MULTILINE)
_HISTORY_MARKERS = ("Hyper-parameters: {", "No experiments recorded yet.", " -> score ", " -> failed")


class BisectRefineBackend:
    """Deterministic proposal policy for loop tests: midpoint first, then
    re-center on the best logged configuration with a per-dimension step
    that halves every sweep over the dimensions.

    The policy reads everything it knows from the rendered conversation
    (hyperparameter lines, the objective direction, and the experiment
    history returned by the log tool), exactly as a model would. It exists
    to make end-to-end runs deterministic and convergent; it models no
    particular LLM.
    """

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str:
        text = "\n".join(m.content for m in messages)
        if "Best Hyper-Parameter Found in Experiment" in text:
            return self._analysis_reply(text)
        if not any(marker in text for marker in _HISTORY_MARKERS):
            return (
                "Thought: I should review the experiment history before proposing.\n"
                "Action: LoadHistoricalTrainingLogs\n"
                "Action Input: all"
            )
        return self._proposal_reply(text)

    def _analysis_reply(self, text: str) -> str:
        return (
            "1. Best Hyper-Parameter Found in Experiment:\n"
            "The best configuration is the one with the best recorded final score.\n\n"
            "2. Influence of Each Hyper-Parameter:\n"
            "Values closer to the best-scoring configuration performed better.\n\n"
            "3. Potential Future Exploration Direction:\n"
            "Continue halving the step around the best configuration."
        )

    def _parse_dims(self, text: str):
        dims = []
        for m in _HP_LINE.finditer(text):
            dims.append({
                "name": m.group("name"),
                "kind": m.group("kind"),
                "log": bool(m.group("log")),
                "lo": float(m.group("lo")),
                "hi": float(m.group("hi")),
            })
        choices = {}
        for m in _CHOICE_LINE.finditer(text):
            choices[m.group("name")] = [c.strip() for c in m.group("choices").split(",")]
        return dims, choices

    def _parse_history(self, text: str) -> list[tuple[dict, float]]:
        pairs = []
        for pattern in (_LOGGED_PAIR, _OPRO_PAIR):
            for m in pattern.finditer(text):
                try:
                    pairs.append((json.loads(m.group("config")), float(m.group("score"))))
                except (ValueError, json.JSONDecodeError):
                    continue
            if pairs:
                break
        return pairs

    def _direction(self, text: str) -> str:
        for line in text.splitlines():
            if line.startswith("Objective:"):
                lowered = line.lower()
                if "minimiz" in lowered:
                    return "minimize"
                if "maximiz" in lowered:
                    return "maximize"
        return "maximize"

    def _proposal_reply(self, text: str) -> str:
        dims, choices = self._parse_dims(text)
        history = self._parse_history(text)
        direction = self._direction(text)
        proposal: dict = {}

        if not history:
            for d in dims:
                if d["log"]:
                    mid = 10 ** ((math.log10(d["lo"]) + math.log10(d["hi"])) / 2)
                else:
                    mid = (d["lo"] + d["hi"]) / 2
                proposal[d["name"]] = int(round(mid)) if d["kind"] == "integer" else mid
            for name, opts in choices.items():
                proposal[name] = opts[0]
            rationale = "Starting from the central region of the search space."
        else:
            better = min if direction == "minimize" else max
            best_config, _ = better(history, key=lambda p: p[1])
            k = len(history) - 1
            ndims = max(len(dims), 1)
            halvings = k // ndims
            dim_index = k % ndims
            sign = 1.0 if halvings % 2 == 0 else -1.0
            for i, d in enumerate(dims):
                base = best_config.get(d["name"], (d["lo"] + d["hi"]) / 2)
                value = float(base)
                if i == dim_index:
                    step = (d["hi"] - d["lo"]) / (4.0 * (2 ** halvings))
                    value = min(max(value + sign * step, d["lo"]), d["hi"])
                proposal[d["name"]] = int(round(value)) if d["kind"] == "integer" else value
            for name, opts in choices.items():
                proposal[name] = best_config.get(name, opts[0])
            rationale = "Re-centering on the best configuration so far with a halved step."

        return f"Thought: {rationale}\nFinal Answer: {rationale}\n{json.dumps(proposal)}"


PROGRAMMATIC_STRATEGIES = {"bisect-refine": BisectRefineBackend}


@dataclass(frozen=True)
class BackendSpec:
    """Declarative backend selection; ``create_session`` builds a fresh
    backend handle per run so scripted call counters never interleave."""

    kind: str  # http | scripted | programmatic
    base_url: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    transcript: tuple[str, ...] = ()
    strategy: str = "bisect-refine"

    def __post_init__(self):
        if self.kind not in ("http", "scripted", "programmatic"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "scripted" and not self.transcript:
            raise ValueError("scripted backend requires a non-empty transcript")
        if self.kind == "http" and not re.match(r"^https?://", self.base_url):
            raise ValueError(f"http backend requires a valid base_url, got {self.base_url!r}")
        if self.kind == "programmatic" and self.strategy not in PROGRAMMATIC_STRATEGIES:
            raise ValueError(f"unknown programmatic strategy {self.strategy!r}")

    def create_session(self):
        if self.kind == "http":
            return HttpBackend(self.base_url, api_key_env=self.api_key_env, retry=self.retry)
        if self.kind == "scripted":
            return ScriptedBackend(self.transcript)
        return PROGRAMMATIC_STRATEGIES[self.strategy]()
