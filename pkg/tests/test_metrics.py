import math

import numpy as np
import pytest

from rce import metrics
from rce.metrics import ExperimentReport, planning_loss, succeeded, success_rate
from rce.model import ModelShape, decode, encode, init_params
from rce.planar import Dataset, EnvConfig, generate_dataset
from rce.planner import Trace
from rce.training import ConfigError


@pytest.fixture(scope="module")
def params():
    return init_params(ModelShape(), 0)


@pytest.fixture(scope="module")
def data():
    return generate_dataset(EnvConfig(), 40, 3)


def test_uninformative_decoder_costs_ln2_per_pixel(data):
    p = init_params(ModelShape(), 1)
    p.decoder[-1].weight.data[:] = 0.0
    p.decoder[-1].bias.data[:] = 0.0
    losses = metrics.reconstruction_losses(p, data)
    np.testing.assert_allclose(losses, 1600 * math.log(2), rtol=1e-12)
    assert metrics.reconstruction_loss(p, data) == pytest.approx(1109.035, abs=1e-3)


def test_saturated_decoder(data):
    p = init_params(ModelShape(), 1)
    p.decoder[-1].weight.data[:] = 0.0
    p.decoder[-1].bias.data[:] = 40.0
    ones = Dataset(np.ones((2, 1600)), np.zeros((2, 2)), np.ones((2, 1600)), np.zeros((2, 2)),
                   np.zeros((2, 2)))
    assert np.all(metrics.reconstruction_losses(p, ones) < 1e-12)
    zeros = Dataset(np.zeros((2, 1600)), np.zeros((2, 2)), np.zeros((2, 1600)),
                    np.zeros((2, 2)), np.zeros((2, 2)))
    np.testing.assert_allclose(metrics.prediction_losses(p, zeros), 1600 * 40.0, rtol=1e-12)


def test_reconstruction_matches_hand_bce(params, data):
    three = data.subset(slice(0, 3))
    got = metrics.reconstruction_losses(params, three)
    for i in range(3):
        logits = decode(params, encode(params, three.x[i]).mean).data
        prob = 1.0 / (1.0 + np.exp(-logits))
        x = three.x[i]
        want = -np.sum(x * np.log(prob) + (1 - x) * np.log(1 - prob))
        assert got[i] == pytest.approx(want, rel=1e-9)


def test_prediction_goes_through_the_transition(params, data):
    p = init_params(ModelShape(), 2)
    last = p.linearization[-1]
    last.weight.data[:] = 0.0
    last.bias.data[:] = 0.0
    last.bias.data[8:] = [0.5, -0.5]  # c shifts the latent
    z = encode(p, data.x[:1]).mean.data
    # w = r = softplus(0) gives M = I + ln2^2 11^T; the map below undoes it
    A = np.linalg.inv(np.eye(2) + math.log(2) ** 2 * np.ones((2, 2)))
    logits = decode(p, z @ A.T + [0.5, -0.5]).data
    prob = 1.0 / (1.0 + np.exp(-logits))
    x = data.x_next[0]
    want = -np.sum(x * np.log(prob) + (1 - x) * np.log(1 - prob))
    assert metrics.prediction_losses(p, data.subset(slice(0, 1)))[0] == pytest.approx(want,
                                                                                       rel=1e-9)


def test_identity_transition_separates_prediction_from_reconstruction(data):
    p = init_params(ModelShape(), 4)
    last = p.linearization[-1]
    last.weight.data[:] = 0.0
    last.bias.data[:] = 0.0
    last.bias.data[:4] = -800.0  # softplus underflows to exactly 0
    same = Dataset(data.x, data.u, data.x, data.s, data.s)
    np.testing.assert_allclose(metrics.prediction_losses(p, same),
                               metrics.reconstruction_losses(p, same), rtol=0, atol=1e-10)


def test_empty_dataset_rejected(params, data):
    with pytest.raises(ConfigError):
        metrics.reconstruction_loss(params, data.subset(slice(0, 0)))
    with pytest.raises(ConfigError):
        metrics.prediction_loss(params, data.subset(slice(0, 0)))


def make_trace(states, actions=None, failed=False):
    states = np.asarray(states, dtype=np.float64)
    T = len(states) - 1
    actions = np.zeros((T, 2)) if actions is None else np.asarray(actions, dtype=np.float64)
    return Trace(states, actions, np.zeros(T + 1), failed=failed)


def test_planning_loss_hand_cases():
    J, failed = planning_loss(make_trace([[38.0, 37.0], [37.0, 37.0]]), (37.0, 37.0))
    assert J == 1.0 and not failed
    assert planning_loss(make_trace([[37.0, 37.0]] * 5), (37.0, 37.0))[0] == 0.0
    J, _ = planning_loss(make_trace([[37.0, 37.0]] * 2, [[3.0, -1.0]]), (37.0, 37.0))
    assert J == pytest.approx(0.01 * 10)
    assert planning_loss(make_trace([[0.0, 0.0]] * 2, failed=True), (0.0, 0.0))[1]


def test_planning_loss_matches_brute_force(rng):
    for _ in range(10):
        T = int(rng.integers(1, 15))
        states = rng.uniform(2, 38, (T + 1, 2))
        actions = rng.uniform(-3, 3, (T, 2))
        L = rng.normal(size=(2, 2))
        Q, R = L @ L.T, np.diag(rng.uniform(0.01, 1, 2))
        goal = rng.uniform(2, 38, 2)
        want = 0.0
        for t in range(T):
            d = states[t] - goal
            want += d @ Q @ d + actions[t] @ R @ actions[t]
        got, _ = planning_loss(make_trace(states, actions), goal, Q, R)
        assert got == pytest.approx(want, rel=1e-12)


def test_success_reach_and_remain():
    goal = np.array([37.0, 37.0])
    path = np.linspace([3.0, 3.0], goal, 21)
    pinned = make_trace(np.tile(goal, (41, 1)))
    assert succeeded(pinned.states, goal)
    arrives = np.vstack([path, np.tile(goal, (20, 1))])
    assert succeeded(arrives, goal)
    # touches at t = 10, leaves at t = 20
    touch = np.tile([20.0, 20.0], (41, 1))
    touch[10:20] = goal
    assert not succeeded(touch, goal)
    # last step only still counts: t* = T
    late = np.tile([20.0, 20.0], (41, 1))
    late[-1] = goal + [1.0, 1.0]
    assert succeeded(late, goal)
    edge = np.tile(goal + [2.0, 0.0], (3, 1))
    assert succeeded(edge, goal) and not succeeded(edge, goal, eps_goal=1.99)


def test_success_rate_over_twenty_traces():
    goal = np.array([37.0, 37.0])
    traces = []
    for k in range(20):
        states = np.tile(goal, (41, 1)) if k % 4 else np.tile([10.0, 10.0], (41, 1))
        traces.append(make_trace(states, failed=(k == 5)))
    # 5 never arrive, one more is a planner failure
    assert success_rate(traces, goal) == pytest.approx(14 / 20)
    assert success_rate([make_trace(np.tile(goal, (41, 1)))] * 20, goal) == 1.0
    with pytest.raises(ValueError):
        success_rate([], goal)


def test_experiment_report_validation():
    ok = ExperimentReport(0.0, (1.0, 0.1), (2.0, 0.2), (3.0, 0.3), 0.5, 20)
    assert ok.success_rate == 0.5
    with pytest.raises(ValueError):
        ExperimentReport(0.0, (1.0, 0.1), (2.0, 0.2), (3.0, 0.3), 1.5, 20)
    with pytest.raises(ValueError):
        ExperimentReport(0.0, (1.0, -0.1), (2.0, 0.2), (3.0, 0.3), 0.5, 20)
    assert metrics.mean_std([1.0, 3.0]) == (2.0, 1.0)
