"""Planning runs and per-noise-level experiment reports."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .model import RceParams
from .planar import GOAL_STATE, START_STATE, EnvConfig, PlanarEnv, generate_dataset, render
from .planner import PlanConfig, Trace, receding_horizon_control
from .training import TrainConfig, TrainResult, train

TRACE_COLUMNS = ["step", "true_state_x", "true_state_y", "action_0", "action_1",
                 "latent_goal_dist"]
REPORT_COLUMNS = ["noise_sigma", "reconstruction_loss", "reconstruction_std", "prediction_loss",
                  "prediction_std", "planning_loss", "planning_std", "success_rate", "runs"]


@dataclass(frozen=True)
class Task:
    start: tuple[float, float] = START_STATE
    goal: tuple[float, float] = GOAL_STATE
    steps: int = 40


def run_seeds(seed: int, runs: int) -> list[int]:
    """Independent per-run seeds; run ``k`` does not depend on how many runs follow it."""
    return [int(np.random.SeedSequence([seed, k]).generate_state(1)[0]) for k in range(runs)]


def plan_runs(params: RceParams, env_cfg: EnvConfig, runs: int, seed: int,
              plan_cfg: PlanConfig | None = None, task: Task = Task(),
              keep_frames: bool = False) -> list[Trace]:
    plan_cfg = plan_cfg or PlanConfig()
    x_goal = render(env_cfg, np.asarray(task.goal, dtype=np.float64))
    traces = []
    for k in run_seeds(seed, runs):
        env_seed, plan_seed = np.random.SeedSequence(k).generate_state(2)
        env = PlanarEnv(env_cfg, task.start, seed=int(env_seed))
        traces.append(receding_horizon_control(env, params, x_goal, task.steps, plan_cfg,
                                               int(plan_seed), keep_frames))
    return traces


def report_from(sigma: float, params: RceParams, test, traces: list[Trace],
                goal=GOAL_STATE) -> metrics.ExperimentReport:
    J = [metrics.planning_loss(tr, goal)[0] for tr in traces]
    return metrics.ExperimentReport(
        noise_sigma=float(sigma),
        reconstruction_loss=metrics.mean_std(metrics.reconstruction_losses(params, test)),
        prediction_loss=metrics.mean_std(metrics.prediction_losses(params, test)),
        planning_loss=metrics.mean_std(J),
        success_rate=metrics.success_rate(traces, goal),
        runs=len(traces),
    )


def report_row(rep: metrics.ExperimentReport) -> list:
    return [rep.noise_sigma, *rep.reconstruction_loss, *rep.prediction_loss,
            *rep.planning_loss, rep.success_rate, rep.runs]


def run_experiment(sigma: float, train_cfg: TrainConfig, n_train: int = 5000,
                   n_test: int = 1000, runs: int = 20, seed: int = 0,
                   plan_cfg: PlanConfig | None = None, task: Task = Task(),
                   env_cfg: EnvConfig | None = None
                   ) -> tuple[metrics.ExperimentReport, TrainResult, list[Trace]]:
    """Generate data at noise ``sigma``, train, then evaluate on fresh triples and plan."""
    env_cfg = (env_cfg or EnvConfig()).with_sigma(sigma)
    data_seed, test_seed, plan_seed = np.random.SeedSequence([seed, 1]).generate_state(3)
    data = generate_dataset(env_cfg, n_train, int(data_seed))
    result = train(data, train_cfg)
    test = generate_dataset(env_cfg, n_test, int(test_seed))
    traces = plan_runs(result.params, env_cfg, runs, int(plan_seed), plan_cfg, task)
    return report_from(sigma, result.params, test, traces, task.goal), result, traces


def trace_rows(trace: Trace) -> list[list]:
    rows = []
    for t, (s, d) in enumerate(zip(trace.states, trace.latent_goal_dist)):
        a = trace.actions[t] if t < len(trace.actions) else (float("nan"), float("nan"))
        rows.append([t, s[0], s[1], a[0], a[1], d])
    return rows


def write_frame_strip(path: str | Path, frames: np.ndarray, side: int = 40, scale: int = 3) -> None:
    """Save frames left to right as one grayscale PNG."""
    from PIL import Image

    imgs = (np.asarray(frames).reshape(-1, side, side) > 0.5).astype(np.uint8) * 255
    # image row 0 is y = 0; flip so y grows upwards in the picture
    strip = np.concatenate([np.pad(im[::-1], ((0, 0), (0, 1)), constant_values=128)
                            for im in imgs], axis=1)
    Image.fromarray(strip).resize((strip.shape[1] * scale, strip.shape[0] * scale),
                                  Image.NEAREST).save(path)
