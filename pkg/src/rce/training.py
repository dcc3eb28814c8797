"""The RCE lower bound and its stochastic optimisation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .distributions import bernoulli_log_likelihood, entropy, kl_diag, log_prob, sample_reparam
from .model import (ModelShape, RceParams, backward_encode, decode, encode, init_params,
                    linearize, quiet_start, reverse_transition)
from .planar import Dataset
from .tensor import ContractError, Tape, Tensor

log = logging.getLogger(__name__)

TERMS = ("bce", "kl", "entropy", "logp")


class ConfigError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class LossWeights:
    """Weights on the KL and log p(z_t | x_t) terms.

    ``schedule`` holds ``(epoch, value)`` breakpoints, linearly interpolated
    and held constant past the last one; the last value must be 1.
    """

    schedule: list[tuple[float, float]] = field(default_factory=lambda: [(0, 1.0)])

    def __post_init__(self):
        self.schedule = sorted((float(e), float(v)) for e, v in self.schedule)
        if not self.schedule:
            raise ConfigError("empty loss-weight schedule")
        if any(v < 0 for _, v in self.schedule):
            raise ConfigError("loss weights must be non-negative")
        if self.schedule[-1][1] != 1.0:
            raise ConfigError("final loss weight must be 1")

    def at(self, epoch: float) -> float:
        xs = [e for e, _ in self.schedule]
        ys = [v for _, v in self.schedule]
        return float(np.interp(epoch, xs, ys))

    @classmethod
    def pendulum(cls, epochs: int) -> "LossWeights":
        return cls([(0, 10.0), (max(epochs - 1, 1), 1.0)])


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 50
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float = 10.0
    seed: int = 0
    checkpoint_every: int = 0
    schedule: list[tuple[float, float]] = field(default_factory=lambda: [(0, 1.0)])
    shape: ModelShape = field(default_factory=ModelShape)
    init_log_var: float | None = None  # set to apply quiet_start after init

    @classmethod
    def planar(cls, **kw) -> "TrainConfig":
        """Settings that train the planar model within 50 epochs."""
        base = dict(batch_size=32, learning_rate=1e-3, init_log_var=-6.0)
        base.update(kw)
        return cls(**base)

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigError("batch_size and epochs must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        self.adam_betas = (float(b1), float(b2))
        self.schedule = [tuple(p) for p in self.schedule]
        if isinstance(self.shape, dict):
            self.shape = ModelShape.from_dict(self.shape)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.schedule)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = self.shape.to_dict()
        d["adam_betas"] = list(self.adam_betas)
        d["schedule"] = [list(p) for p in self.schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


@dataclass
class LossTerms:
    loss: Tensor
    terms: dict[str, float]  # batch means of the four bound terms (unweighted)


def rce_loss(params: RceParams, x_t, u_t, x_next, eps1, eps2,
             w_kl: float = 1.0, w_logp: float = 1.0) -> LossTerms:
    """Negated RCE bound, averaged over the batch.

    Sampling order: z_hat_{t+1} from the encoder at x_{t+1}, then z_bar_t from
    the backward encoder, then z_t by the reverse transition at (z_bar_t, u_t).
    """
    q_next = encode(params, x_next)
    z_hat = sample_reparam(q_next, eps1)
    q_back = backward_encode(params, x_t, z_hat)
    z_bar = sample_reparam(q_back, eps2)
    dyn = linearize(params, z_bar, u_t)
    z_t = reverse_transition(dyn, z_hat, u_t)
    p_cur = encode(params, x_t)

    bce = bernoulli_log_likelihood(decode(params, z_hat), x_next)
    kl = kl_diag(q_back, p_cur)
    ent = entropy(q_next)
    logp = log_prob(p_cur, z_t)
    values = {"bce": bce, "kl": kl, "entropy": ent, "logp": logp}
    for name, t in values.items():
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"non-finite {name} term in RCE loss")
    bound = bce - kl * w_kl + ent + logp * w_logp
    loss = -T.mean(bound)
    return LossTerms(loss, {k: float(np.mean(v.data)) for k, v in values.items()})


class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"missing gradient for {p.name or p}")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


def adam_step(params: list[Tensor], state: dict | None, lr: float,
              betas=(0.9, 0.999), eps_hat: float = 1e-8) -> dict:
    """Functional Adam update; ``state`` is the dict returned by the previous call."""
    opt = Adam(params, lr, betas, eps_hat)
    if state is not None:
        opt.t, opt.m, opt.v = state["t"], state["m"], state["v"]
    opt.step()
    return opt.state()


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return norm


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    bce_term: float
    kl_term: float
    entropy_term: float
    logp_term: float
    wall_seconds: float


@dataclass
class TrainResult:
    params: RceParams
    metrics: list[EpochMetrics]
    config: TrainConfig


class TrainingAborted(RuntimeError):
    pass


def canonical_order(data: Dataset) -> np.ndarray:
    """Row order that depends only on the triples, not on how they were stored."""
    return np.lexsort((data.x_next.sum(axis=1), data.x.sum(axis=1), data.u[:, 1], data.u[:, 0]))


def train(data: Dataset, config: TrainConfig,
          on_checkpoint: Callable[[RceParams, int], None] | None = None,
          params: RceParams | None = None) -> TrainResult:
    if len(data) == 0:
        raise ConfigError("empty dataset")
    shape = config.shape
    if data.x.shape[1] != shape.n_x or data.u.shape[1] != shape.n_u:
        raise ConfigError(f"dataset dims ({data.x.shape[1]}, {data.u.shape[1]}) do not match "
                          f"model ({shape.n_x}, {shape.n_u})")
    init_seq, run_seq = np.random.SeedSequence(config.seed).spawn(2)
    if params is None:
        params = init_params(shape, int(init_seq.generate_state(1)[0]))
        if config.init_log_var is not None:
            quiet_start(params, config.init_log_var)
    rng = np.random.default_rng(run_seq)
    weights = config.weights
    plist = params.parameters()
    opt = Adam(plist, config.learning_rate, config.adam_betas, config.adam_eps)
    base = canonical_order(data)
    n = len(data)
    metrics = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        w = weights.at(epoch - 1)
        order = base[rng.permutation(n)]
        sums = dict.fromkeys(("loss",) + TERMS, 0.0)
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            m = idx.size
            eps1 = rng.standard_normal((m, shape.n_z))
            eps2 = rng.standard_normal((m, shape.n_z))
            params.zero_grad()
            try:
                with Tape() as tape:
                    out = rce_loss(params, data.x[idx], data.u[idx], data.x_next[idx],
                                   eps1, eps2, w, w)
            except NumericError as err:
                raise TrainingAborted(f"epoch {epoch} batch {b}: {err}") from err
            if not math.isfinite(out.loss.item()):
                raise TrainingAborted(f"epoch {epoch} batch {b}: non-finite loss")
            T.backward(out.loss, tape, plist)
            clip_grad_norm(plist, config.clip_norm)
            opt.step()
            sums["loss"] += out.loss.item() * m
            for k in TERMS:
                sums[k] += out.terms[k] * m
        em = EpochMetrics(epoch, sums["loss"] / n, sums["bce"] / n, sums["kl"] / n,
                          sums["entropy"] / n, sums["logp"] / n, time.perf_counter() - start)
        metrics.append(em)
        log.info("epoch %d loss %.3f (bce %.3f kl %.3f H %.3f logp %.3f) %.1fs", epoch,
                 em.mean_loss, em.bce_term, em.kl_term, em.entropy_term, em.logp_term,
                 em.wall_seconds)
        if on_checkpoint is not None and config.checkpoint_every and (
                epoch % config.checkpoint_every == 0 or epoch == config.epochs):
            on_checkpoint(params, epoch)
    return TrainResult(params, metrics, config)


def write_metrics(path: str | Path, metrics: list[EpochMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "bce_term", "kl_term", "entropy_term",
                         "logp_term", "wall_seconds"])
        for m in metrics:
            writer.writerow([m.epoch, f"{m.mean_loss:.6f}", f"{m.bce_term:.6f}",
                             f"{m.kl_term:.6f}", f"{m.entropy_term:.6f}",
                             f"{m.logp_term:.6f}", f"{m.wall_seconds:.3f}"])
