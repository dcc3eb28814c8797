"""Reconstruction, prediction and planning losses, and success rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import bernoulli_log_likelihood
from .model import RceParams, decode, encode, forward_transition, linearize
from .planar import Dataset
from .planner import Trace
from .training import ConfigError

EPS_GOAL = 2.0
Q_TRUE = np.eye(2)
R_TRUE = 0.01 * np.eye(2)


def _chunks(n: int, size: int = 500):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


def reconstruction_losses(params: RceParams, data: Dataset) -> np.ndarray:
    """Per-image BCE (summed over pixels) of decoding the posterior mean of x_t."""
    if len(data) == 0:
        raise ConfigError("empty dataset")
    out = []
    for sl in _chunks(len(data)):
        z = encode(params, data.x[sl]).mean
        out.append(-bernoulli_log_likelihood(decode(params, z), data.x[sl]).data)
    return np.concatenate(out)


def prediction_losses(params: RceParams, data: Dataset) -> np.ndarray:
    """Per-image BCE of predicting x_{t+1} through the mean-latent transition."""
    if len(data) == 0:
        raise ConfigError("empty dataset")
    out = []
    for sl in _chunks(len(data)):
        z = encode(params, data.x[sl]).mean
        dyn = linearize(params, z, data.u[sl])
        z_next = forward_transition(dyn, z, data.u[sl])
        out.append(-bernoulli_log_likelihood(decode(params, z_next), data.x_next[sl]).data)
    return np.concatenate(out)


def reconstruction_loss(params: RceParams, data: Dataset) -> float:
    return float(np.mean(reconstruction_losses(params, data)))


def prediction_loss(params: RceParams, data: Dataset) -> float:
    return float(np.mean(prediction_losses(params, data)))


def planning_loss(trace: Trace, s_goal, Q=Q_TRUE, R=R_TRUE) -> tuple[float, bool]:
    """True-state quadratic cost over the executed steps; returns ``(J, failed)``.

    States ``s_1..s_T`` pair with actions ``u_1..u_T``; the state reached
    after the last action is not charged.
    """
    T = trace.actions.shape[0]
    d = trace.states[:T] - np.asarray(s_goal, dtype=np.float64)
    J = np.einsum("ti,ij,tj->", d, Q, d) + np.einsum("ti,ij,tj->", trace.actions, R, trace.actions)
    return float(J), bool(trace.failed)


def succeeded(states: np.ndarray, s_goal, eps_goal: float = EPS_GOAL) -> bool:
    """Reached the goal ball at some step and stayed inside it until the end."""
    dist = np.linalg.norm(np.asarray(states) - np.asarray(s_goal, dtype=np.float64), axis=1)
    inside = dist <= eps_goal
    # the run succeeds iff the trailing block of in-goal steps is non-empty
    return bool(inside[-1])


def success_rate(traces, s_goal, eps_goal: float = EPS_GOAL) -> float:
    traces = list(traces)
    if not traces:
        raise ValueError("success_rate needs at least one trace")
    wins = [not tr.failed and succeeded(tr.states, s_goal, eps_goal) for tr in traces]
    return float(np.mean(wins))


@dataclass
class ExperimentReport:
    noise_sigma: float
    reconstruction_loss: tuple[float, float]
    prediction_loss: tuple[float, float]
    planning_loss: tuple[float, float]
    success_rate: float
    runs: int

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success_rate outside [0, 1]")
        for mean_std in (self.reconstruction_loss, self.prediction_loss, self.planning_loss):
            if mean_std[1] < 0:
                raise ValueError("negative standard deviation")


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())
