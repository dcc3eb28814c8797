"""Diagonal Gaussians and the Bernoulli pixel likelihood.

Every function accepts a single distribution (1-D mean/log-variance) or a
batch of them (2-D, one row per sample) and reduces over the last axis, so a
batch yields one value per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, DomainError, Tensor

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(init=False)
class DiagGaussian:
    mean: Tensor
    log_var: Tensor

    def __init__(self, mean, log_var, clamp: bool = True):
        mean = T._wrap(mean)
        log_var = T._wrap(log_var)
        if mean.shape != log_var.shape:
            raise DimensionError(f"mean {mean.shape} vs log_var {log_var.shape}")
        self.mean = mean
        self.log_var = T.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX) if clamp else log_var

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var.data)

    @classmethod
    def from_head(cls, head: Tensor) -> "DiagGaussian":
        """Split a network output ``[mean | log_var]`` along the last axis."""
        n = head.shape[-1]
        if n % 2:
            raise DimensionError(f"head width {n} is odd")
        return cls(T.cols(head, 0, n // 2), T.cols(head, n // 2, n))


def _check(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")


def sample_reparam(g: DiagGaussian, eps) -> Tensor:
    eps = T._wrap(eps)
    _check(g.mean, eps)
    return g.mean + T.exp(g.log_var * 0.5) * eps


def kl_diag(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) between diagonal Gaussians."""
    _check(q.mean, p.mean)
    d = p.mean - q.mean
    inv_var_p = T.exp(-p.log_var)
    terms = T.exp(q.log_var - p.log_var) + d * d * inv_var_p + (p.log_var - q.log_var) - 1.0
    return T.sum(terms, axis=-1) * 0.5


def entropy(g: DiagGaussian) -> Tensor:
    return T.sum(g.log_var + (LOG_2PI + 1.0), axis=-1) * 0.5


def log_prob(g: DiagGaussian, x) -> Tensor:
    x = T._wrap(x)
    _check(g.mean, x)
    d = x - g.mean
    terms = g.log_var + d * d * T.exp(-g.log_var) + LOG_2PI
    return T.sum(terms, axis=-1) * -0.5


def bernoulli_log_likelihood(logits, target) -> Tensor:
    """Sum of ``t log s(l) + (1 - t) log(1 - s(l))`` over the last axis.

    Evaluated as ``t * l - softplus(l)``, which stays finite for any logit.
    """
    logits = T._wrap(logits)
    target = T._wrap(target)
    _check(logits, target)
    if np.any(target.data < 0.0) or np.any(target.data > 1.0):
        raise DomainError("Bernoulli targets must lie in [0, 1]")
    return T.sum(target * logits - T.softplus(logits), axis=-1)
