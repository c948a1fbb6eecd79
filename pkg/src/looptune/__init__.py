"""looptune: LLM-agent-driven hyperparameter optimization with classical
baselines and a benchmark harness."""

from .space import (
    Config,
    HyperparameterSpec,
    SchemaError,
    SearchSpace,
    ValidationError,
    describe_for_prompt,
    load_search_space,
    parse_search_space,
    sample_uniform,
    serialize_search_space,
    validate_config,
)
from .llm import (
    BackendSpec,
    ChatMessage,
    CompletionParams,
    HttpBackend,
    RetryPolicy,
    ScriptedBackend,
    with_retry,
)
from .react import AgentOutcome, ReActStep, ToolSpec, parse_block, run_loop
from .tasks import TaskSpec, TrainingTrajectory, eval_convex2d, run_task
from .explog import (
    ExperimentLog,
    FinalAnalysis,
    LogEntry,
    TrialResult,
    best_so_far,
    deserialize,
    load_log,
    milestone_report,
    serialize,
)
from .executor import ExecutorEnv, execute, summarize_trajectory
from .creator import BackgroundInfo, Creator, OptimizationGoal, Proposal
from .baselines import TpeState, opro_create, random_propose, tpe_propose
from .harness import ExperimentPlan, compare, load_plan, run_experiment, run_single

__version__ = "0.1.0"

__all__ = [
    "AgentOutcome",
    "BackendSpec",
    "BackgroundInfo",
    "ChatMessage",
    "CompletionParams",
    "Config",
    "Creator",
    "ExecutorEnv",
    "ExperimentLog",
    "ExperimentPlan",
    "FinalAnalysis",
    "HttpBackend",
    "HyperparameterSpec",
    "LogEntry",
    "OptimizationGoal",
    "Proposal",
    "ReActStep",
    "RetryPolicy",
    "SchemaError",
    "ScriptedBackend",
    "SearchSpace",
    "TaskSpec",
    "ToolSpec",
    "TpeState",
    "TrainingTrajectory",
    "TrialResult",
    "ValidationError",
    "best_so_far",
    "compare",
    "describe_for_prompt",
    "deserialize",
    "eval_convex2d",
    "execute",
    "load_log",
    "load_plan",
    "load_search_space",
    "milestone_report",
    "opro_create",
    "parse_block",
    "parse_search_space",
    "random_propose",
    "run_experiment",
    "run_loop",
    "run_single",
    "run_task",
    "sample_uniform",
    "serialize",
    "serialize_search_space",
    "summarize_trajectory",
    "tpe_propose",
    "validate_config",
    "with_retry",
]
