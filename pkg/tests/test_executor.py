import json
import sys

import numpy as np
import pytest

from looptune.executor import (
    ExecutorEnv,
    FileMissing,
    NonZeroExit,
    SummaryThresholds,
    Timeout,
    build_executor_prompt,
    execute,
    run_training_command,
    summarize_trajectory,
    tool_load_configs,
    tool_load_training_logs,
    tool_write_configs,
)
from looptune.llm import CompletionParams, ScriptedBackend
from looptune.space import HyperparameterSpec, SearchSpace
from looptune.tasks import TaskSpec, TrainingTrajectory, default_space, write_training_log

PARAMS = CompletionParams(model="test", temperature=0.0)

CONVEX_TASK = TaskSpec(kind="convex2d", params={"center": [2.0, 3.0], "bounds": [-5.0, 5.0]},
                       goal_metric="objective", direction="minimize")


@pytest.fixture
def convex_env(tmp_path):
    task_file = tmp_path / "task.json"
    task_file.write_text(json.dumps(CONVEX_TASK.to_dict()))
    command = f"{sys.executable} -m looptune.run_trial {task_file} {{config}} {{log}} --seed 0"
    return ExecutorEnv.create(tmp_path / "work", command, timeout=60.0)


def convex_space():
    return default_space(CONVEX_TASK)


class TestEnv:
    def test_paths_must_stay_inside_workdir(self, tmp_path):
        with pytest.raises(ValueError):
            ExecutorEnv(workdir=tmp_path / "w", config_path=tmp_path / "elsewhere.json",
                        train_command="true", train_log_path=tmp_path / "w" / "log.json")

    def test_timeout_positive(self, tmp_path):
        with pytest.raises(ValueError):
            ExecutorEnv.create(tmp_path, "true", timeout=0)


class TestTools:
    def test_load_configs_reads_back_verbatim(self, convex_env):
        convex_env.config_path.write_text('{"lr":0.001}')
        assert tool_load_configs(convex_env) == '{"lr":0.001}'

    def test_load_configs_missing_file(self, convex_env):
        with pytest.raises(FileMissing):
            tool_load_configs(convex_env)

    def test_load_configs_empty_file_is_valid(self, convex_env):
        convex_env.config_path.write_text("")
        assert tool_load_configs(convex_env) == ""

    def test_write_merges_over_existing(self, convex_env):
        space = SearchSpace(specs=(
            HyperparameterSpec("lr", "float", lower=1e-5, upper=1e-1),
            HyperparameterSpec("opt", "categorical", choices=("adam", "sgd")),
        ))
        convex_env.config_path.write_text(json.dumps({"lr": 0.001, "opt": "adam"}))
        observation = tool_write_configs(convex_env, json.dumps({"lr": 0.01}), space)
        assert "lr" in observation
        assert json.loads(convex_env.config_path.read_text()) == {"lr": 0.01, "opt": "adam"}

    def test_write_non_json_returns_parse_error_text(self, convex_env):
        observation = tool_write_configs(convex_env, "lr=0.01", convex_space())
        assert observation.startswith("ParseError")

    def test_write_out_of_range_returns_validation_text(self, convex_env):
        space = SearchSpace(specs=(HyperparameterSpec("lr", "float", lower=1e-5, upper=1e-1),))
        observation = tool_write_configs(convex_env, json.dumps({"lr": 99}), space)
        assert observation.startswith("ValidationError")
        assert "lr" in observation

    def test_write_never_drops_absent_keys_fuzz(self, convex_env):
        space = SearchSpace(specs=tuple(
            HyperparameterSpec(name, "float", lower=0.0, upper=1.0) for name in "abcde"
        ))
        rng = np.random.default_rng(0)
        current = {name: 0.5 for name in "abcde"}
        convex_env.config_path.write_text(json.dumps(current))
        for _ in range(50):
            subset = {name: round(float(rng.uniform(0, 1)), 3)
                      for name in "abcde" if rng.uniform() < 0.5}
            tool_write_configs(convex_env, json.dumps(subset), space)
            expected = {**current, **subset}
            assert json.loads(convex_env.config_path.read_text()) == expected
            current = expected

    def test_execute_training_writes_log(self, convex_env):
        convex_env.config_path.write_text(json.dumps({"x": 1.0, "y": 1.0}))
        observation = run_training_command(convex_env)
        assert convex_env.train_log_path.exists()
        assert "final_metric=5" in observation

    def test_failing_command(self, tmp_path):
        env = ExecutorEnv.create(tmp_path, "false")
        with pytest.raises(NonZeroExit) as err:
            run_training_command(env)
        assert err.value.code == 1

    def test_timeout_kills_process(self, tmp_path):
        env = ExecutorEnv.create(tmp_path, "sleep 5", timeout=0.3)
        with pytest.raises(Timeout):
            run_training_command(env)

    def test_load_training_logs_renders_trajectory(self, convex_env):
        traj = TrainingTrajectory(epochs=[0, 5], metrics={"val_acc": [42.57, 66.96]},
                                  final_metric=66.96, total_time_s=10.0)
        write_training_log(convex_env.train_log_path, traj)
        text = tool_load_training_logs(convex_env, goal_metric="val_acc")
        assert "Epoch: [0, 5]" in text
        assert "Val Acc: [42.57, 66.96]" in text

    def test_load_training_logs_missing(self, convex_env):
        with pytest.raises(FileMissing):
            tool_load_training_logs(convex_env)


# Trajectory excerpts in the shape of real image-classifier runs: training
# accuracy saturates high while validation accuracy falls off its peak.
OVERFIT_TRAJ = TrainingTrajectory(
    epochs=[0, 5, 10, 15, 20, 25, 30, 35, 40, 45],
    metrics={
        "train_loss": [1.5783, 0.5534, 0.2122, 0.1135, 0.0776, 0.0759, 0.054, 0.0521, 0.0536, 0.0508],
        "train_acc": [42.0275, 80.615, 92.675, 96.1475, 97.3, 97.44, 98.1325, 98.2725, 98.1925, 98.2525],
        "val_loss": [1.7791, 0.7139, 0.7447, 0.8525, 0.7293, 0.9376, 0.8194, 0.8674, 0.8768, 0.9351],
        "val_acc": [39.43, 75.77, 78.15, 78.3, 81.33, 78.63, 80.68, 80.24, 80.23, 78.59],
    },
    final_metric=80.41,
    total_time_s=1438.35,
)


class TestSummary:
    def test_overfitting_flagged_on_saturating_run(self):
        summary = summarize_trajectory(OVERFIT_TRAJ, "maximize")
        assert "overfitting" in summary

    def test_second_overfit_example(self):
        traj = TrainingTrajectory(
            epochs=list(range(15)),
            metrics={
                "train_acc": [27.47, 65.47, 80.205, 90.9475, 97.0475, 98.7675, 98.82,
                              98.7775, 99.615, 99.3625, 99.18, 99.5225, 99.3925, 99.4, 99.6625],
                "val_acc": [42.57, 66.96, 77.0, 77.23, 78.53, 77.01, 79.4, 77.06, 80.11,
                            81.84, 80.69, 81.21, 80.82, 80.93, 75.28],
            },
            final_metric=81.45, total_time_s=3096.64)
        assert "overfitting" in summarize_trajectory(traj, "maximize")

    def test_constant_val_series_flags_plateau(self):
        traj = TrainingTrajectory(epochs=list(range(6)),
                                  metrics={"val_acc": [0.5] * 6},
                                  final_metric=0.5, total_time_s=1.0)
        assert "plateau" in summarize_trajectory(traj, "maximize")

    def test_strictly_improving_run_has_no_flags(self):
        traj = TrainingTrajectory(
            epochs=list(range(6)),
            metrics={
                "train_loss": [1.0, 0.6, 0.4, 0.3, 0.2, 0.1],
                "train_acc": [0.5, 0.6, 0.7, 0.8, 0.85, 0.9],
                "val_acc": [0.45, 0.55, 0.65, 0.7, 0.75, 0.8],
            },
            final_metric=0.8, total_time_s=1.0)
        summary = summarize_trajectory(traj, "maximize")
        assert "No training anomalies detected." in summary

    def test_nonconvergence_flagged(self):
        traj = TrainingTrajectory(
            epochs=list(range(5)),
            metrics={"train_loss": [1.0, 0.99, 0.97, 0.96, 0.95],
                     "val_acc": [0.5, 0.52, 0.55, 0.56, 0.58]},
            final_metric=0.58, total_time_s=1.0)
        assert "converge" in summarize_trajectory(traj, "maximize")

    def test_thresholds_configurable(self):
        relaxed = SummaryThresholds(overfit_rel=0.5)
        assert "overfitting" not in summarize_trajectory(OVERFIT_TRAJ, "maximize", relaxed)

    def test_deterministic(self):
        assert summarize_trajectory(OVERFIT_TRAJ, "maximize") == \
            summarize_trajectory(OVERFIT_TRAJ, "maximize")


class TestDirectMode:
    def test_center_scores_zero(self, convex_env):
        result = execute({"x": 2.0, "y": 3.0}, convex_env, convex_space(), CONVEX_TASK)
        assert result.status == "succeeded"
        assert result.final_score == 0

    def test_contract_config_on_disk_equals_requested(self, convex_env):
        config = {"x": 1.5, "y": -0.5}
        execute(config, convex_env, convex_space(), CONVEX_TASK)
        assert json.loads(convex_env.config_path.read_text()) == config

    def test_failing_command_yields_failed_result(self, tmp_path):
        task = TaskSpec(kind="external", params={"command": "false {config} {log}"},
                        goal_metric="m")
        env = ExecutorEnv.create(tmp_path, task.params["command"])
        result = execute({"x": 0.0, "y": 0.0}, env, convex_space(), task)
        assert result.status == "failed"
        assert result.final_score is None

    def test_determinism_bit_identical_files(self, convex_env):
        config = {"x": 0.25, "y": 0.75}
        execute(config, convex_env, convex_space(), CONVEX_TASK)
        first = convex_env.train_log_path.read_bytes()
        execute(config, convex_env, convex_space(), CONVEX_TASK)
        assert convex_env.train_log_path.read_bytes() == first


class TestAgenticMode:
    def happy_path_backend(self, config):
        return ScriptedBackend([
            "Thought: inspect the current configuration\nAction: LoadConfigs\nAction Input: none",
            f"Thought: apply the requested values\nAction: WriteConfigs\nAction Input: {json.dumps(config)}",
            "Thought: start training\nAction: ExecutePythonFile\nAction Input: run",
            "Thought: read the results\nAction: LoadTrainingLogs\nAction Input: none",
            "Thought: I now know the final answer\n"
            "Final Answer: Training finished; the objective value equals the final metric.",
        ])

    def test_four_tool_happy_path(self, convex_env):
        config = {"x": 1.0, "y": 1.0}
        transcripts = []
        result = execute(config, convex_env, convex_space(), CONVEX_TASK, mode="agentic",
                         backend=self.happy_path_backend(config), params=PARAMS,
                         transcript_sink=transcripts.append)
        assert result.status == "succeeded"
        assert result.final_score == 5  # matches the written training log
        assert "final answer" in result.analysis_text.lower() or result.analysis_text
        assert len(transcripts) == 1
        assert "Action: WriteConfigs" in transcripts[0]

    def test_agent_writing_different_config_fails_trial(self, convex_env):
        requested = {"x": 1.0, "y": 1.0}
        sneaky = ScriptedBackend([
            f"Action: WriteConfigs\nAction Input: {json.dumps({'x': 0.0, 'y': 0.0})}",
            "Action: ExecutePythonFile\nAction Input: run",
            "Final Answer: done",
        ])
        result = execute(requested, convex_env, convex_space(), CONVEX_TASK,
                         mode="agentic", backend=sneaky, params=PARAMS)
        assert result.status == "failed"
        # the on-disk record is restored to the requested configuration
        assert json.loads(convex_env.config_path.read_text()) == requested

    def test_step_budget_exhaustion_is_a_failed_trial(self, convex_env):
        rambler = ScriptedBackend(["Action: LoadConfigs\nAction Input: none"] * 4)
        result = execute({"x": 0.0, "y": 0.0}, convex_env, convex_space(), CONVEX_TASK,
                         mode="agentic", backend=rambler, params=PARAMS, max_steps=2)
        assert result.status == "failed"

    def test_requires_backend(self, convex_env):
        with pytest.raises(ValueError):
            execute({"x": 0.0, "y": 0.0}, convex_env, convex_space(), CONVEX_TASK,
                    mode="agentic")


class TestPrompt:
    def test_template_contains_tools_and_format_block(self):
        prompt = build_executor_prompt("tune it")
        for name in ("LoadConfigs", "WriteConfigs", "ExecutePythonFile", "LoadTrainingLogs"):
            assert f'Name: "{name}"' in prompt
        assert "Thought: you should always think about what to do" in prompt
        assert "Task: tune it" in prompt
        assert prompt.endswith("Thought:")
