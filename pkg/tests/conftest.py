import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from looptune.creator import BackgroundInfo, OptimizationGoal
from looptune.explog import ExperimentLog, FinalAnalysis, LogEntry, RunMetadata, TrialResult
from looptune.harness import ExperimentPlan, derive_seeds
from looptune.tasks import TaskSpec, TrainingTrajectory, default_space

CONVEX_TASK = TaskSpec(kind="convex2d", params={"center": [2.0, 3.0], "bounds": [-5.0, 5.0]},
                       goal_metric="objective", direction="minimize")

CONVEX_BACKGROUND = BackgroundInfo(
    model_info="Model: a black-box function of two real inputs.",
    dataset_info="Dataset: none; the function is evaluated directly per trial.",
    optimization_goal=OptimizationGoal(
        "objective", "minimize",
        "Minimize the objective value returned by the training run; lower is better."),
)


def convex_plan(output_dir, strategy="random", trials=10, n_runs=1, master_seed=7,
                milestones=(1, 3, 5, 10), backend=None, executor_mode="direct",
                workers=1, strategy_params=None):
    return ExperimentPlan(
        task=CONVEX_TASK,
        space=default_space(CONVEX_TASK),
        background=CONVEX_BACKGROUND,
        strategy=strategy,
        strategy_params=strategy_params or {},
        trials_per_run=trials,
        n_runs=n_runs,
        seeds=derive_seeds(master_seed, n_runs),
        milestones=tuple(t for t in milestones if t <= trials),
        backend=backend,
        executor_mode=executor_mode,
        output_dir=Path(output_dir),
        workers=workers,
        name="convex-probe",
    )


def make_log(rng: np.random.Generator, n_entries: int | None = None,
             fail_rate: float = 0.2, with_trajectories: bool = True,
             with_analysis: bool = False) -> ExperimentLog:
    """Seeded random run log for property tests."""
    if n_entries is None:
        n_entries = int(rng.integers(0, 12))
    log = ExperimentLog(metadata=RunMetadata(
        task_id="generated", space_id="a,b", strategy="random",
        seed=int(rng.integers(0, 2**31)), direction="maximize",
        created_at=float(rng.uniform(0, 2e9)),
    ))
    for t in range(1, n_entries + 1):
        failed = rng.uniform() < fail_rate
        config = {"a": float(rng.uniform(-5, 5)), "b": int(rng.integers(0, 100))}
        if failed:
            result = TrialResult(status="failed", final_score=None,
                                 analysis_text="trial failed: boom")
        else:
            traj = None
            if with_trajectories:
                n_epochs = int(rng.integers(1, 6))
                traj = TrainingTrajectory(
                    epochs=list(range(n_epochs)),
                    metrics={"val_acc": [float(rng.uniform(0, 1)) for _ in range(n_epochs)]},
                    final_metric=0.0,
                    total_time_s=float(rng.uniform(0, 100)),
                )
                traj = TrainingTrajectory(
                    epochs=traj.epochs, metrics=traj.metrics,
                    final_metric=traj.metrics["val_acc"][-1],
                    total_time_s=traj.total_time_s,
                )
            score = traj.final_metric if traj else float(rng.uniform(0, 1))
            result = TrialResult(status="succeeded", final_score=score,
                                 analysis_text="fine", trajectory=traj)
        started = float(rng.uniform(0, 2e9))
        log.entries.append(LogEntry(
            trial_index=t, config=config, rationale=f"trial {t} rationale",
            result=result, started_at=started,
            finished_at=started + float(rng.uniform(0, 100)),
            transcript_ref=None if rng.uniform() < 0.5 else f"transcripts/trial_{t:02d}.txt",
        ))
    if with_analysis and log.scored_entries():
        best = max(log.scored_entries(), key=lambda e: e.result.final_score)
        log.final_analysis = FinalAnalysis(
            best_config=dict(best.config), best_reasoning="best by score",
            influence_notes="a matters", future_directions="look around",
        )
    return log


class StubChatServer:
    """Local chat-completions endpoint that captures request bodies and
    replays a scripted list of (status, payload) responses."""

    def __init__(self):
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.responses: list[tuple[int, object]] = []
        self._lock = threading.Lock()

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                with stub._lock:
                    stub.requests.append(json.loads(body))
                    stub.headers.append({k: v for k, v in self.headers.items()})
                    if stub.responses:
                        status, payload = stub.responses.pop(0)
                    else:
                        status, payload = 200, stub.default_payload()
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @staticmethod
    def default_payload(content: str = "ok"):
        return {"choices": [{"message": {"content": content}}]}

    def queue(self, status: int, payload) -> None:
        self.responses.append((status, payload))

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_server():
    server = StubChatServer().start()
    yield server
    server.stop()
