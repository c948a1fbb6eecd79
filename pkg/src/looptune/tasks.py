"""Builtin desk-scale training tasks and the training-log file contract.

Every task, builtin or external, reports one trial as a JSON training log::

    {"epochs": [int...],
     "metrics": {"<series>": [number...], ...},
     "final_metric": number,
     "total_time_s": number}

with every series exactly as long as ``epochs``. Builtin tasks are
deterministic per (task, config, seed), including ``total_time_s`` (a
simulated duration derived from the workload, so repeated runs are
byte-identical on disk).

The synthetic trainer draws its curves from a documented closed form. With
asymptote ``A`` (config-dependent), approach rate ``r``, degradation
coefficient ``c`` and epoch count ``E``, at epoch index e = 0..E-1 (u = e+1):

    val_acc(e)   = A * (1 - exp(-r * u)) - c * A * (u / E)^2
    train_acc(e) = min(0.999, A + 0.08 + 0.3 * c) * (1 - exp(-1.5 * r * u))
    train_loss(e) = 2.0 * exp(-1.5 * r * u) + 0.02
    val_loss(e)   = 1.05 - val_acc(e)

``A = clip(base - sum_h w_h * d_h(config)^2, 0.01, 0.999)`` where ``d_h`` is
the distance of hyperparameter ``h`` from its declared optimum (log10 space
for log-scaled HPs, 0/1 mismatch for choices). Seeded Gaussian noise of the
declared level is added to every point; accuracies are then clipped to
[0, 1] and losses floored at 1e-4.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Mapping

import jsonschema
import numpy as np

from .space import Config, HyperparameterSpec, SearchSpace

TASK_KINDS = ("convex2d", "synthetic_trainer", "toy_classifier", "external")
DIRECTIONS = ("maximize", "minimize")

TRAINING_LOG_SCHEMA = {
    "type": "object",
    "required": ["epochs", "metrics", "final_metric", "total_time_s"],
    "additionalProperties": False,
    "properties": {
        "epochs": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "metrics": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {"type": "array", "items": {"type": "number"}},
        },
        "final_metric": {"type": "number"},
        "total_time_s": {"type": "number", "minimum": 0},
    },
}


class TaskError(Exception):
    pass


class OutOfBounds(TaskError):
    """A convex-probe point lies outside the declared bounds."""


class DivergenceDetected(TaskError):
    """Training loss became non-finite; the trial is reported as failed."""


class LogParseError(TaskError):
    """A training-log file does not honor the contract."""


@dataclass(frozen=True)
class TrainingTrajectory:
    """Per-epoch metric series of one trial."""

    epochs: list[int]
    metrics: dict[str, list[float]]
    final_metric: float
    total_time_s: float

    def __post_init__(self):
        if not self.epochs:
            raise LogParseError("trajectory must cover at least one epoch")
        for name, series in self.metrics.items():
            if len(series) != len(self.epochs):
                raise LogParseError(
                    f"series {name!r} has {len(series)} points for {len(self.epochs)} epochs"
                )
        if self.total_time_s < 0:
            raise LogParseError("total_time_s must be >= 0")

    def to_dict(self) -> dict:
        return {
            "epochs": list(self.epochs),
            "metrics": {k: list(v) for k, v in self.metrics.items()},
            "final_metric": self.final_metric,
            "total_time_s": self.total_time_s,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "TrainingTrajectory":
        try:
            jsonschema.validate(obj, TRAINING_LOG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise LogParseError(f"training log violates contract: {e.message}") from e
        return cls(
            epochs=[int(e) for e in obj["epochs"]],
            metrics={k: [float(x) for x in v] for k, v in obj["metrics"].items()},
            final_metric=float(obj["final_metric"]),
            total_time_s=float(obj["total_time_s"]),
        )


def write_training_log(path, traj: TrainingTrajectory) -> None:
    """Atomic write (temp file + rename) of the training-log contract."""
    path = os.fspath(path)
    payload = json.dumps(traj.to_dict(), indent=1)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_training_log(path) -> TrainingTrajectory:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise LogParseError(f"training log is not valid JSON: {e}") from e
    return TrainingTrajectory.from_dict(obj)


@dataclass(frozen=True)
class TaskSpec:
    """One optimization task: what to run and which metric to optimize."""

    kind: str
    params: dict = field(default_factory=dict)
    goal_metric: str = "val_acc"
    direction: str = "maximize"

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise TaskError(f"unknown task kind {self.kind!r}")
        if self.direction not in DIRECTIONS:
            raise TaskError(f"direction must be maximize or minimize, got {self.direction!r}")
        p = self.params
        if self.kind == "convex2d":
            center = p.get("center", (2.0, 3.0))
            bounds = p.get("bounds", (-5.0, 5.0))
            if len(bounds) != 2 or not bounds[0] < bounds[1]:
                raise TaskError("convex2d bounds must be an increasing [lo, hi] pair")
            if not all(bounds[0] <= c <= bounds[1] for c in center):
                raise TaskError("convex2d bounds must contain the center")
        elif self.kind == "synthetic_trainer":
            if p.get("noise", 0.0) < 0:
                raise TaskError("synthetic trainer noise must be >= 0")
            if p.get("epochs", 50) < 2:
                raise TaskError("synthetic trainer needs at least 2 epochs")
        elif self.kind == "toy_classifier":
            if p.get("size", 200) < 20:
                raise TaskError("toy classifier needs at least 20 samples")
        elif self.kind == "external":
            cmd = p.get("command", "")
            if "{config}" not in cmd or "{log}" not in cmd:
                raise TaskError("external command template must contain {config} and {log}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "goal_metric": self.goal_metric,
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "TaskSpec":
        unknown = set(obj) - {"kind", "params", "goal_metric", "direction"}
        if unknown:
            raise TaskError(f"unknown task keys: {', '.join(sorted(unknown))}")
        return cls(
            kind=obj.get("kind", ""),
            params=dict(obj.get("params", {})),
            goal_metric=obj.get("goal_metric", "val_acc"),
            direction=obj.get("direction", "maximize"),
        )


def default_space(task: TaskSpec) -> SearchSpace:
    """A sensible search space for each builtin task kind."""
    if task.kind == "convex2d":
        lo, hi = task.params.get("bounds", (-5.0, 5.0))
        return SearchSpace(specs=(
            HyperparameterSpec("x", "float", lower=lo, upper=hi, description="first input coordinate"),
            HyperparameterSpec("y", "float", lower=lo, upper=hi, description="second input coordinate"),
        ))
    if task.kind == "synthetic_trainer":
        return SearchSpace(specs=(
            HyperparameterSpec("learning_rate", "float", lower=1e-5, upper=1e-1, log_scale=True,
                               description="optimizer step size"),
            HyperparameterSpec("batch_size", "ordinal", choices=(32, 64, 128, 256, 512),
                               description="samples per gradient step"),
            HyperparameterSpec("epochs", "integer", lower=10, upper=80,
                               description="training epochs"),
        ))
    if task.kind == "toy_classifier":
        return SearchSpace(specs=(
            HyperparameterSpec("learning_rate", "float", lower=1e-4, upper=1.0, log_scale=True,
                               description="gradient-descent step size"),
            HyperparameterSpec("epochs", "integer", lower=10, upper=200,
                               description="passes over the training set"),
            HyperparameterSpec("l2_weight", "float", lower=0.0, upper=0.1,
                               description="L2 regularization strength"),
            HyperparameterSpec("batch_size", "ordinal", choices=(8, 16, 32, 64),
                               description="mini-batch size"),
        ))
    raise TaskError(f"no default space for task kind {task.kind!r}")


# --- convex probe -------------------------------------------------------------

def eval_convex2d(center: tuple[float, float], point: tuple[float, float],
                  bounds: tuple[float, float] = (-5.0, 5.0)) -> float:
    """f(x, y) = (x - a)^2 + (y - b)^2 over the square [lo, hi]^2."""
    x, y = float(point[0]), float(point[1])
    lo, hi = bounds
    if not (lo <= x <= hi and lo <= y <= hi):
        raise OutOfBounds(f"point ({x}, {y}) outside [{lo}, {hi}]^2")
    a, b = center
    return (x - a) ** 2 + (y - b) ** 2


def _convex_trajectory(task: TaskSpec, config: Config) -> TrainingTrajectory:
    center = tuple(task.params.get("center", (2.0, 3.0)))
    bounds = tuple(task.params.get("bounds", (-5.0, 5.0)))
    value = eval_convex2d(center, (config["x"], config["y"]), bounds)
    return TrainingTrajectory(
        epochs=[0],
        metrics={"objective": [value]},
        final_metric=value,
        total_time_s=0.0,
    )


# --- synthetic trainer --------------------------------------------------------

def _surface_asymptote(params: Mapping[str, Any], config: Config) -> float:
    base = float(params.get("base", 0.9))
    optimum = params.get("optimum", {})
    sensitivity = params.get("sensitivity", {})
    log_hps = set(params.get("log_hps", ["learning_rate"]))
    penalty = 0.0
    for name, weight in sensitivity.items():
        if name not in config or name not in optimum:
            continue
        value, opt = config[name], optimum[name]
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if name in log_hps:
                d = math.log10(float(value)) - math.log10(float(opt))
            else:
                d = float(value) - float(opt)
            penalty += weight * d * d
        else:
            penalty += weight * (0.0 if value == opt else 1.0)
    return min(max(base - penalty, 0.01), 0.999)


def run_synthetic_trainer(params: Mapping[str, Any], config: Config, seed: int,
                          epochs: int | None = None) -> TrainingTrajectory:
    """Generate a multi-epoch trajectory from the documented closed form."""
    E = int(epochs if epochs is not None else config.get("epochs", params.get("epochs", 50)))
    rate = float(params.get("rate", 0.15))
    c = float(params.get("overfit", 0.0))
    noise = float(params.get("noise", 0.0))
    A = _surface_asymptote(params, config)
    t_inf = min(0.999, A + 0.08 + 0.3 * c)

    u = np.arange(1, E + 1, dtype=float)
    val_acc = A * (1.0 - np.exp(-rate * u)) - c * A * (u / E) ** 2
    train_acc = t_inf * (1.0 - np.exp(-1.5 * rate * u))
    train_loss = 2.0 * np.exp(-1.5 * rate * u) + 0.02
    val_loss = 1.05 - val_acc

    if noise > 0:
        rng = np.random.default_rng(seed)
        val_acc = val_acc + rng.normal(0.0, noise, E)
        train_acc = train_acc + rng.normal(0.0, noise, E)
        train_loss = train_loss + rng.normal(0.0, noise, E)
        val_loss = val_loss + rng.normal(0.0, noise, E)
    val_acc = np.clip(val_acc, 0.0, 1.0)
    train_acc = np.clip(train_acc, 0.0, 1.0)
    train_loss = np.maximum(train_loss, 1e-4)
    val_loss = np.maximum(val_loss, 1e-4)

    return TrainingTrajectory(
        epochs=list(range(E)),
        metrics={
            "train_loss": [round(float(v), 6) for v in train_loss],
            "train_acc": [round(float(v), 6) for v in train_acc],
            "val_loss": [round(float(v), 6) for v in val_loss],
            "val_acc": [round(float(v), 6) for v in val_acc],
        },
        final_metric=round(float(val_acc[-1]), 6),
        total_time_s=round(0.37 * E + 1.2, 2),
    )


# --- toy classifier -----------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _log_loss(p: np.ndarray, y: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        losses = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(np.mean(losses))


def run_toy_classifier(config: Config, dataset_seed: int, size: int,
                       separation: float = 6.0) -> TrainingTrajectory:
    """Logistic regression by mini-batch gradient descent on two seeded
    Gaussian blobs (unit variance, centers ``separation`` apart on the x
    axis). Deterministic per (config, dataset_seed, size)."""
    if size < 20:
        raise TaskError("toy classifier needs at least 20 samples")
    rng = np.random.default_rng(dataset_seed)
    half = size // 2
    X_neg = rng.normal(0.0, 1.0, (half, 2)) + np.array([-separation / 2, 0.0])
    X_pos = rng.normal(0.0, 1.0, (size - half, 2)) + np.array([separation / 2, 0.0])
    X = np.vstack([X_neg, X_pos])
    y = np.concatenate([np.zeros(half), np.ones(size - half)])
    order = rng.permutation(size)
    X, y = X[order], y[order]
    n_train = int(size * 0.75)
    X_train, y_train = X[:n_train], y[:n_train]
    X_val, y_val = X[n_train:], y[n_train:]

    lr = float(config.get("learning_rate", 0.1))
    epochs = int(config.get("epochs", 100))
    l2 = float(config.get("l2_weight", 0.0))
    batch_size = int(config.get("batch_size", 32))

    Xb_train = np.hstack([X_train, np.ones((n_train, 1))])
    Xb_val = np.hstack([X_val, np.ones((size - n_train, 1))])
    w = np.zeros(3)

    epochs_out, tl, ta, vl, va = [], [], [], [], []
    for epoch in range(epochs):
        idx = rng.permutation(n_train)
        for start in range(0, n_train, batch_size):
            batch = idx[start:start + batch_size]
            p = _sigmoid(Xb_train[batch] @ w)
            grad = Xb_train[batch].T @ (p - y_train[batch]) / len(batch)
            grad[:2] += l2 * w[:2]
            w = w - lr * grad

        p_train = _sigmoid(Xb_train @ w)
        p_val = _sigmoid(Xb_val @ w)
        train_loss = _log_loss(p_train, y_train)
        val_loss = _log_loss(p_val, y_val)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss) and np.all(np.isfinite(w))):
            raise DivergenceDetected(f"loss became non-finite at epoch {epoch}")
        epochs_out.append(epoch)
        tl.append(round(train_loss, 6))
        ta.append(round(float(np.mean((p_train >= 0.5) == y_train)), 6))
        vl.append(round(val_loss, 6))
        va.append(round(float(np.mean((p_val >= 0.5) == y_val)), 6))

    return TrainingTrajectory(
        epochs=epochs_out,
        metrics={"train_loss": tl, "train_acc": ta, "val_loss": vl, "val_acc": va},
        final_metric=va[-1],
        total_time_s=round(2e-6 * epochs * size, 6),
    )


def _series_title(name: str) -> str:
    return " ".join(part.capitalize() for part in name.split("_"))


def _num(v: float) -> str:
    return f"{v:g}"


def render_trajectory(traj: TrainingTrajectory, goal_metric: str | None = None) -> str:
    """Textual trajectory block: epoch list, one line per metric series,
    total time and the final metric value. Deterministic."""
    lines = [f"Epoch: {traj.epochs}"]
    for name, series in traj.metrics.items():
        lines.append(f"{_series_title(name)}: [{', '.join(_num(v) for v in series)}]")
    lines.append(f"Total Training Time: {_num(traj.total_time_s)}s")
    final_name = _series_title(goal_metric) if goal_metric else "Metric"
    lines.append(f"Final {final_name}: {traj.final_metric:.4f}")
    return "\n".join(lines)


# --- dispatch -----------------------------------------------------------------

def run_task(task: TaskSpec, config: Config, env, seed: int) -> TrainingTrajectory:
    """Run one trial of ``task`` and leave its training log at
    ``env.train_log_path``. Builtin kinds compute and write the log
    in-process; the external kind runs the task's command template as a
    subprocess (which writes the log itself)."""
    if task.kind == "convex2d":
        traj = _convex_trajectory(task, config)
    elif task.kind == "synthetic_trainer":
        traj = run_synthetic_trainer(task.params, config, seed)
    elif task.kind == "toy_classifier":
        traj = run_toy_classifier(
            config,
            dataset_seed=int(task.params.get("seed", 0)),
            size=int(task.params.get("size", 200)),
            separation=float(task.params.get("separation", 6.0)),
        )
    else:
        from .executor import run_training_command

        run_training_command(env)
        return load_training_log(env.train_log_path)
    write_training_log(env.train_log_path, traj)
    return traj
