"""Latent-space iLQR and the receding-horizon control loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import RceParams, encode_mean_np, linearization_weights
from .planar import PlanarEnv

log = logging.getLogger(__name__)


class PlannerFailure(RuntimeError):
    """Riccati pass could not make the control Hessian positive definite."""


@dataclass
class LatentModel:
    """The learned linearization head, flattened for the kernels."""

    weights: tuple[np.ndarray, ...]
    n_z: int
    n_u: int

    @classmethod
    def from_params(cls, params: RceParams) -> "LatentModel":
        if len(params.linearization) != 3:
            raise ValueError("planner kernels expect a linearization head with two hidden layers")
        return cls(linearization_weights(params), params.shape.n_z, params.shape.n_u)

    @classmethod
    def constant(cls, w, r, B, c, hidden: int = 4) -> "LatentModel":
        """Stub whose dynamics ignore the linearization point.

        Zero-valued ``w``/``r`` entries are encoded with a large negative
        pre-activation, which softplus maps to exactly 0.0.
        """
        w, r, c = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (w, r, c))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        nz, nu = B.shape
        head = np.concatenate([_inv_softplus(w), _inv_softplus(r), B.reshape(-1), c])
        weights = (np.zeros((nz + nu, hidden)), np.zeros(hidden),
                   np.zeros((hidden, hidden)), np.zeros(hidden),
                   np.zeros((hidden, head.size)), head)
        return cls(weights, nz, nu)

    def step(self, z, u) -> np.ndarray:
        A, B, c = kernels.lin_head(*self.weights, np.asarray(z, float), np.asarray(u, float))
        return A @ z + B @ u + c


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    out = np.full(y.shape, -800.0)
    pos = y > 0
    out[pos] = y[pos] + np.log(-np.expm1(-y[pos]))
    return out


@dataclass
class PlanConfig:
    horizon: int = 40
    ilqr_iters: int = 10
    Q: np.ndarray = field(default_factory=lambda: np.eye(2))
    R: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))
    action_clip: float = 3.0
    levenberg_mu0: float = 1e-6
    levenberg_mu_max: float = 1e6
    line_search: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)

    def __post_init__(self):
        self.Q = np.ascontiguousarray(self.Q, dtype=np.float64)
        self.R = np.ascontiguousarray(self.R, dtype=np.float64)
        if self.horizon < 0 or self.ilqr_iters <= 0:
            raise ValueError("horizon must be >= 0 and ilqr_iters positive")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise ValueError("R must be positive definite")
        if self.levenberg_mu0 <= 0:
            raise ValueError("levenberg_mu0 must be positive")


@dataclass
class ReferenceTrajectory:
    latents: np.ndarray  # (H+1, n_z)
    actions: np.ndarray  # (H, n_u)
    A: np.ndarray  # (H, n_z, n_z)
    B: np.ndarray  # (H, n_z, n_u)
    c: np.ndarray  # (H, n_z)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def offsets(self) -> np.ndarray:
        """Residual of the linear step around the reference; ~0 when self-consistent."""
        Z, U = self.latents, self.actions
        pred = np.einsum("tij,tj->ti", self.A, Z[:-1]) + np.einsum("tij,tj->ti", self.B, U) + self.c
        return np.ascontiguousarray(pred - Z[1:])


@dataclass
class LqrPolicy:
    gains: np.ndarray  # (H, n_u, n_z + 1), acting on [y; 1]
    cost_to_go: np.ndarray  # (H+1, n_z + 1, n_z + 1)

    @property
    def predicted_cost(self) -> float:
        return float(self.cost_to_go[0, -1, -1])


@dataclass
class IlqrResult:
    actions: np.ndarray
    cost: float
    accepted_costs: list[float]
    latents: np.ndarray


def rollout_reference(model: LatentModel, z_init, actions) -> ReferenceTrajectory:
    z0 = np.ascontiguousarray(z_init, dtype=np.float64)
    U = np.ascontiguousarray(np.asarray(actions, dtype=np.float64).reshape(-1, model.n_u))
    Z, As, Bs, cs = kernels.rollout(*model.weights, z0, U)
    return ReferenceTrajectory(Z, U, As, Bs, cs)


def lqr_backward(traj: ReferenceTrajectory, z_goal, cfg: PlanConfig) -> LqrPolicy:
    goal = np.ascontiguousarray(z_goal, dtype=np.float64)
    K, P, status = kernels.riccati(traj.A, traj.B, traj.offsets(), traj.latents, traj.actions,
                                   goal, cfg.Q, cfg.R, cfg.levenberg_mu0, cfg.levenberg_mu_max)
    if status != 0:
        raise PlannerFailure("control Hessian not positive definite at the regularization cap")
    return LqrPolicy(K, P)


def ilqr(model: LatentModel, z_init, z_goal, init_actions, cfg: PlanConfig) -> IlqrResult:
    """Iterate reference rollout, Riccati pass and a backtracking forward pass.

    A step is accepted at the first scale that lowers the model-predicted
    cost; when none does, the best sequence so far is returned.
    """
    z0 = np.ascontiguousarray(z_init, dtype=np.float64)
    goal = np.ascontiguousarray(z_goal, dtype=np.float64)
    U = np.clip(np.asarray(init_actions, dtype=np.float64).reshape(-1, model.n_u),
                -cfg.action_clip, cfg.action_clip)
    traj = rollout_reference(model, z0, U)
    cost = kernels.trajectory_cost(traj.latents, traj.actions, goal, cfg.Q, cfg.R)
    if not np.isfinite(cost):
        raise PlannerFailure("initial rollout diverged")
    accepted = [cost]
    if traj.horizon == 0:
        return IlqrResult(traj.actions, cost, accepted, traj.latents)
    for _ in range(cfg.ilqr_iters):
        policy = lqr_backward(traj, goal, cfg)
        for alpha in cfg.line_search:
            Z, Un = kernels.policy_rollout(*model.weights, z0, traj.latents, traj.actions,
                                           policy.gains, alpha, cfg.action_clip)
            new_cost = kernels.trajectory_cost(Z, Un, goal, cfg.Q, cfg.R)
            if new_cost < cost:
                break
        else:
            break
        cost = new_cost
        accepted.append(cost)
        traj = rollout_reference(model, z0, Un)
    return IlqrResult(traj.actions.copy(), cost, accepted, traj.latents.copy())


@dataclass
class Trace:
    states: np.ndarray  # (T+1, 2) true states
    actions: np.ndarray  # (T, n_u)
    latent_goal_dist: np.ndarray  # (T+1,)
    frames: np.ndarray | None = None  # (T+1, n_x)
    failed: bool = False
    fail_step: int | None = None


def receding_horizon_control(env: PlanarEnv, params: RceParams, x_goal, T: int,
                             cfg: PlanConfig, seed: int, keep_frames: bool = False) -> Trace:
    """Plan ``cfg.horizon`` steps ahead, execute the first action, re-encode, repeat ``T`` times.

    The kept action sequence is shifted left and a fresh uniform action is
    appended before each re-plan.
    """
    rng = np.random.default_rng(seed)
    model = LatentModel.from_params(params)
    H = cfg.horizon
    clip = cfg.action_clip
    z_goal = encode_mean_np(params, x_goal)
    x = env.observe()
    states = [env.state.copy()]
    frames = [x] if keep_frames else None
    actions = []
    z = encode_mean_np(params, x)
    dists = [float(np.linalg.norm(z - z_goal))]
    U = rng.uniform(-clip, clip, size=(H, model.n_u))
    failed_at = None
    for t in range(T):
        try:
            res = ilqr(model, z, z_goal, U, cfg)
        except PlannerFailure:
            log.warning("planner failure at step %d", t)
            failed_at = t
            break
        u = res.actions[0]
        x = env.apply(u)
        actions.append(np.clip(u, -clip, clip))
        states.append(env.state.copy())
        if keep_frames:
            frames.append(x)
        z = encode_mean_np(params, x)
        dists.append(float(np.linalg.norm(z - z_goal)))
        U = np.concatenate([res.actions[1:], rng.uniform(-clip, clip, size=(1, model.n_u))])
    return Trace(np.asarray(states), np.asarray(actions).reshape(-1, model.n_u),
                 np.asarray(dists), None if frames is None else np.asarray(frames),
                 failed_at is not None, failed_at)
