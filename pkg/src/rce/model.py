"""RCE networks and the rank-one locally linear latent transitions.

One encoder serves three roles: q(z_hat_{t+1} | x_{t+1}), p(z_t | x_t) and
p(z_bar_t | x_t). The backward encoder conditions on the current frame and the
*next* latent. The linearization head maps a linearization point
(z_bar, u_bar) to ``(w, r, B, c)`` with ``M = I + w r^T`` the inverse of the
state matrix ``A``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .distributions import DiagGaussian
from .tensor import DimensionError, Layer, Tensor, glorot_layer, mlp_forward


@dataclass(frozen=True)
class ModelShape:
    n_x: int = 1600
    n_z: int = 2
    n_u: int = 2
    enc_hidden: tuple[int, ...] = (300, 300)
    dec_hidden: tuple[int, ...] = (300, 300)
    benc_x: int = 100
    benc_z: int = 5
    benc_merge: int = 100
    lin_hidden: tuple[int, ...] = (20, 20)

    @property
    def lin_out(self) -> int:
        return 3 * self.n_z + self.n_z * self.n_u

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelShape":
        d = dict(d)
        for key in ("enc_hidden", "dec_hidden", "lin_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def tiny(cls, n_x: int = 12, width: int = 8) -> "ModelShape":
        return cls(n_x=n_x, enc_hidden=(width, width), dec_hidden=(width, width),
                   benc_x=width, benc_z=width, benc_merge=width, lin_hidden=(width, width))


@dataclass
class RceParams:
    shape: ModelShape
    encoder: list[Layer]
    backward_x: list[Layer]
    backward_z: list[Layer]
    backward_merge: list[Layer]
    linearization: list[Layer]
    decoder: list[Layer]
    # each encoder role names the same layer list; kept for checkpoints and audits
    roles: dict[str, str] = field(default_factory=lambda: {
        "q_next": "encoder", "p_current": "encoder", "p_linpoint": "encoder"})

    GROUPS = ("encoder", "backward_x", "backward_z", "backward_merge", "linearization", "decoder")

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for group in self.GROUPS:
            for i, layer in enumerate(getattr(self, group)):
                out.append((f"{group}.{i}.weight", layer.weight))
                out.append((f"{group}.{i}.bias", layer.bias))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def role(self, name: str) -> list[Layer]:
        return getattr(self, self.roles[name])


def _stack(rng, widths, acts, prefix) -> list[Layer]:
    return [glorot_layer(rng, widths[i], widths[i + 1], acts[i], f"{prefix}.{i}")
            for i in range(len(widths) - 1)]


def init_params(shape: ModelShape, seed: int) -> RceParams:
    """Glorot-uniform weights, zero biases, drawn in canonical order."""
    rng = np.random.default_rng(seed)
    s = shape

    def chain(n_in, hidden, n_out, prefix):
        widths = (n_in, *hidden, n_out)
        acts = ["relu"] * len(hidden) + ["identity"]
        return _stack(rng, widths, acts, prefix)

    encoder = chain(s.n_x, s.enc_hidden, 2 * s.n_z, "encoder")
    backward_x = _stack(rng, (s.n_x, s.benc_x), ["relu"], "backward_x")
    backward_z = _stack(rng, (s.n_z, s.benc_z), ["relu"], "backward_z")
    backward_merge = chain(s.benc_x + s.benc_z, (s.benc_merge,), 2 * s.n_z, "backward_merge")
    linearization = chain(s.n_z + s.n_u, s.lin_hidden, s.lin_out, "linearization")
    decoder = chain(s.n_z, s.dec_hidden, s.n_x, "decoder")
    return RceParams(shape, encoder, backward_x, backward_z, backward_merge,
                     linearization, decoder)


def quiet_start(params: RceParams, log_var: float, rank_one_bias: float = -5.0) -> None:
    """Shift an initialized model toward small posteriors and identity dynamics.

    Both Gaussian heads start with log-variance near `log_var`; the linearization
    head starts at B = 0, c = 0 with w, r = softplus(rank_one_bias) so M is close
    to the identity. Without this the planar model sits on a blank-image plateau.
    """
    nz = params.shape.n_z
    for layers in (params.encoder, params.backward_merge):
        layers[-1].bias.data[nz:] = log_var
    last = params.linearization[-1]
    last.weight.data[:] = 0.0
    last.bias.data[:] = 0.0
    last.bias.data[:2 * nz] = rank_one_bias


def _expect_width(t: Tensor, n: int, what: str) -> None:
    if t.shape[-1] != n or t.ndim > 2:
        raise DimensionError(f"{what}: expected last dimension {n}, got shape {t.shape}")


def encode(params: RceParams, x) -> DiagGaussian:
    x = T._wrap(x)
    _expect_width(x, params.shape.n_x, "observation")
    return DiagGaussian.from_head(mlp_forward(params.encoder, x))


def backward_encode(params: RceParams, x_t, z_next) -> DiagGaussian:
    """q(z_bar_t | x_t, z_hat_{t+1}): two branches, concatenated, then merged."""
    x_t, z_next = T._wrap(x_t), T._wrap(z_next)
    _expect_width(x_t, params.shape.n_x, "observation")
    _expect_width(z_next, params.shape.n_z, "next latent")
    if x_t.ndim != z_next.ndim:
        raise DimensionError("observation and latent batch layouts differ")
    hx = mlp_forward(params.backward_x, x_t)
    hz = mlp_forward(params.backward_z, z_next)
    return DiagGaussian.from_head(mlp_forward(params.backward_merge, T.concat([hx, hz], axis=-1)))


def decode(params: RceParams, z) -> Tensor:
    """Bernoulli logits over pixels."""
    z = T._wrap(z)
    _expect_width(z, params.shape.n_z, "latent")
    return mlp_forward(params.decoder, z)


@dataclass
class LocalLinearDynamics:
    """Per-sample ``(w, r, B, c)``; single (1-D ``w``) or batched (2-D ``w``)."""

    w: Tensor
    r: Tensor
    B: Tensor
    c: Tensor

    @property
    def M(self) -> np.ndarray:
        w, r = self.w.data, self.r.data
        eye = np.eye(w.shape[-1])
        return eye + w[..., :, None] * r[..., None, :]

    @property
    def A(self) -> np.ndarray:
        """``M^{-1}`` by Sherman-Morrison: ``I - w r^T / (1 + r^T w)``."""
        w, r = self.w.data, self.r.data
        eye = np.eye(w.shape[-1])
        denom = 1.0 + np.sum(r * w, axis=-1)
        return eye - (w[..., :, None] * r[..., None, :]) / np.asarray(denom)[..., None, None]


def linearize(params: RceParams, z_bar, u_bar) -> LocalLinearDynamics:
    z_bar, u_bar = T._wrap(z_bar), T._wrap(u_bar)
    s = params.shape
    _expect_width(z_bar, s.n_z, "linearization latent")
    _expect_width(u_bar, s.n_u, "linearization action")
    single = z_bar.ndim == 1
    if single:
        z_bar = T.reshape(z_bar, (1, s.n_z))
        u_bar = T.reshape(u_bar, (1, s.n_u))
    head = mlp_forward(params.linearization, T.concat([z_bar, u_bar], axis=-1))
    nz, nu = s.n_z, s.n_u
    w = T.softplus(T.cols(head, 0, nz))
    r = T.softplus(T.cols(head, nz, 2 * nz))
    B = T.cols(head, 2 * nz, 2 * nz + nz * nu)
    c = T.cols(head, 2 * nz + nz * nu, s.lin_out)
    n = head.shape[0]
    if single:
        return LocalLinearDynamics(T.reshape(w, (nz,)), T.reshape(r, (nz,)),
                                   T.reshape(B, (nz, nu)), T.reshape(c, (nz,)))
    return LocalLinearDynamics(w, r, T.reshape(B, (n, nz, nu)), c)


def _batched(dyn: LocalLinearDynamics, *vecs: Tensor):
    if dyn.w.ndim == 2:
        return False, dyn, vecs
    nz = dyn.w.shape[0]
    nu = dyn.B.shape[1]
    d = LocalLinearDynamics(T.reshape(dyn.w, (1, nz)), T.reshape(dyn.r, (1, nz)),
                            T.reshape(dyn.B, (1, nz, nu)), T.reshape(dyn.c, (1, nz)))
    return True, d, tuple(T.reshape(v, (1, v.shape[0])) for v in vecs)


def reverse_transition(dyn: LocalLinearDynamics, z_next, u) -> Tensor:
    """``z_t = M (z_hat_{t+1} - B u_t - c)`` with ``M = I + w r^T``."""
    single, d, (z_next, u) = _batched(dyn, T._wrap(z_next), T._wrap(u))
    v = z_next - T.batched_matvec(d.B, u) - d.c
    z = v + T.scale_rows(d.w, T.sum(d.r * v, axis=-1))
    return T.reshape(z, (z.shape[1],)) if single else z


def forward_transition(dyn: LocalLinearDynamics, z, u) -> Tensor:
    """``z_hat_{t+1} = A z_t + B u_t + c`` with ``A = M^{-1}`` applied by Sherman-Morrison."""
    single, d, (z, u) = _batched(dyn, T._wrap(z), T._wrap(u))
    coef = T.sum(d.r * z, axis=-1) / (T.sum(d.r * d.w, axis=-1) + 1.0)
    az = z - T.scale_rows(d.w, coef)
    out = az + T.batched_matvec(d.B, u) + d.c
    return T.reshape(out, (out.shape[1],)) if single else out


def linearization_weights(params: RceParams) -> tuple[np.ndarray, ...]:
    """Flat ``(W0, b0, W1, b1, ...)`` arrays of the linearization head for the kernels."""
    out = []
    for layer in params.linearization:
        out.append(np.ascontiguousarray(layer.weight.data))
        out.append(np.ascontiguousarray(layer.bias.data))
    return tuple(out)


def encode_mean_np(params: RceParams, x: np.ndarray) -> np.ndarray:
    """Posterior mean of the encoder without touching the tape."""
    return encode(params, np.asarray(x, dtype=np.float64)).mean.data.copy()
