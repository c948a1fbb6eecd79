"""Run one trial of a builtin task as a subprocess.

Usage: python -m looptune.run_trial TASK_FILE CONFIG_FILE LOG_FILE [--seed N]

Reads the task definition and the hyperparameter configuration from JSON
files, runs the trial, and writes the training-log JSON to LOG_FILE. This is
the command template used when builtin tasks are driven through the
subprocess training tool.
"""
from __future__ import annotations

import argparse
import json
import sys
from types import SimpleNamespace

from .tasks import TaskError, TaskSpec, run_task


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("task_file")
    parser.add_argument("config_file")
    parser.add_argument("log_file")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    with open(args.task_file, "r", encoding="utf-8") as f:
        task = TaskSpec.from_dict(json.load(f))
    if task.kind == "external":
        print("run_trial only handles builtin task kinds", file=sys.stderr)
        return 1
    with open(args.config_file, "r", encoding="utf-8") as f:
        config = json.load(f)

    env = SimpleNamespace(train_log_path=args.log_file)
    try:
        traj = run_task(task, config, env, seed=args.seed)
    except TaskError as e:
        print(f"trial failed: {e}", file=sys.stderr)
        return 1
    print(f"final_metric={traj.final_metric}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
