"""Planar navigation: a square agent among disc obstacles, seen as 40x40 binary images."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._accel import USE_NUMBA, njit


def _default_obstacles() -> tuple[tuple[float, float], ...]:
    return tuple((x, y) for x in (13.5, 26.5) for y in (8.0, 20.0, 32.0))


@dataclass(frozen=True)
class EnvConfig:
    arena_size: int = 40
    obstacle_centers: tuple[tuple[float, float], ...] = field(default_factory=_default_obstacles)
    obstacle_radius: float = 2.5
    agent_half_width: float = 2.0
    max_action: float = 3.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.max_action <= 0:
            raise ValueError("max_action must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        lo, hi = self.obstacle_radius, self.arena_size - self.obstacle_radius
        for cx, cy in self.obstacle_centers:
            if not (lo <= cx <= hi and lo <= cy <= hi):
                raise ValueError(f"obstacle at ({cx}, {cy}) leaves the arena")

    @property
    def n_x(self) -> int:
        return self.arena_size * self.arena_size

    @property
    def obstacles(self) -> np.ndarray:
        return np.asarray(self.obstacle_centers, dtype=np.float64).reshape(-1, 2)

    def with_sigma(self, sigma: float) -> "EnvConfig":
        d = asdict(self)
        d["obstacle_centers"] = self.obstacle_centers
        d["noise_sigma"] = float(sigma)
        return EnvConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obstacle_centers"] = [list(c) for c in self.obstacle_centers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        d["obstacle_centers"] = tuple(tuple(float(v) for v in c) for c in d["obstacle_centers"])
        return cls(**d)


# Corner-to-corner task. The straight diagonal grazes four obstacles, so the
# planner has to weave through the gaps between the two obstacle columns.
START_STATE = (3.0, 3.0)
GOAL_STATE = (37.0, 37.0)


@dataclass
class ObservationTriple:
    x_t: np.ndarray
    u_t: np.ndarray
    x_next: np.ndarray
    s_t: np.ndarray
    s_next: np.ndarray


@dataclass
class Dataset:
    """Column-stacked triples; row ``i`` is one :class:`ObservationTriple`."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    s: np.ndarray
    s_next: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> ObservationTriple:
        return ObservationTriple(self.x[i], self.u[i], self.x_next[i], self.s[i], self.s_next[i])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.u[idx], self.x_next[idx], self.s[idx],
                       self.s_next[idx], dict(self.meta))


# -- geometry ----------------------------------------------------------------------


@njit
def _collides(px, py, half, obstacles, radius):
    for k in range(obstacles.shape[0]):
        cx, cy = obstacles[k, 0], obstacles[k, 1]
        nx = min(max(cx, px - half), px + half)
        ny = min(max(cy, py - half), py + half)
        dx, dy = cx - nx, cy - ny
        if dx * dx + dy * dy < radius * radius:
            return True
    return False


def collides(cfg: EnvConfig, s) -> bool:
    """Whether the agent square at ``s`` overlaps an obstacle disc."""
    return bool(_collides(float(s[0]), float(s[1]), cfg.agent_half_width,
                          cfg.obstacles, cfg.obstacle_radius))


def is_valid(cfg: EnvConfig, s) -> bool:
    lo, hi = cfg.agent_half_width, cfg.arena_size - cfg.agent_half_width
    return bool(lo <= s[0] <= hi and lo <= s[1] <= hi and not collides(cfg, s))


def step(cfg: EnvConfig, s, u, noise_draw) -> np.ndarray:
    """Translate by the clipped action plus noise; blocked moves leave ``s`` unchanged."""
    s = np.asarray(s, dtype=np.float64)
    u = np.clip(np.asarray(u, dtype=np.float64), -cfg.max_action, cfg.max_action)
    cand = s + u + np.asarray(noise_draw, dtype=np.float64)
    lo, hi = cfg.agent_half_width, cfg.arena_size - cfg.agent_half_width
    cand = np.clip(cand, lo, hi)
    if collides(cfg, cand):
        return s.copy()
    return cand


# -- rendering ---------------------------------------------------------------------


@njit
def _render_loops(px, py, size, half, obstacles, radius):
    img = np.zeros((size, size))
    r2 = radius * radius
    for row in range(size):
        cy = row + 0.5
        for col in range(size):
            cx = col + 0.5
            if px - half <= cx < px + half and py - half <= cy < py + half:
                img[row, col] = 1.0
                continue
            for k in range(obstacles.shape[0]):
                dx = cx - obstacles[k, 0]
                dy = cy - obstacles[k, 1]
                if dx * dx + dy * dy < r2:
                    img[row, col] = 1.0
                    break
    return img.reshape(size * size)


def _render_numpy(px, py, size, half, obstacles, radius):
    centers = np.arange(size) + 0.5
    cx = centers[None, :]
    cy = centers[:, None]
    img = (px - half <= cx) & (cx < px + half) & (py - half <= cy) & (cy < py + half)
    for ox, oy in obstacles:
        img |= (cx - ox) ** 2 + (cy - oy) ** 2 < radius * radius
    return img.astype(np.float64).reshape(size * size)


_render_kernel = _render_loops if USE_NUMBA else _render_numpy


def render(cfg: EnvConfig, s) -> np.ndarray:
    """Row-major 40x40 image: row index is y, column index is x.

    A pixel is lit when its center lies inside an obstacle disc or inside the
    half-open agent square ``[x - h, x + h) x [y - h, y + h)``.
    """
    return _render_kernel(float(s[0]), float(s[1]), cfg.arena_size, cfg.agent_half_width,
                          cfg.obstacles, cfg.obstacle_radius)


def obstacle_image(cfg: EnvConfig) -> np.ndarray:
    far = -10.0 * cfg.arena_size
    return _render_kernel(far, far, cfg.arena_size, cfg.agent_half_width,
                          cfg.obstacles, cfg.obstacle_radius)


# -- sampling ------------------------------------------------------------------------


def sample_valid_state(cfg: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.agent_half_width, cfg.arena_size - cfg.agent_half_width
    while True:
        s = rng.uniform(lo, hi, size=2)
        if not collides(cfg, s):
            return s


def generate_dataset(cfg: EnvConfig, n: int, seed: int) -> Dataset:
    """``n`` triples from uniformly drawn valid states and uniform actions."""
    if n <= 0:
        raise ValueError("dataset size must be positive")
    rng = np.random.default_rng(seed)
    n_x = cfg.n_x
    x = np.empty((n, n_x))
    x_next = np.empty((n, n_x))
    u = np.empty((n, 2))
    s = np.empty((n, 2))
    s_next = np.empty((n, 2))
    for i in range(n):
        s[i] = sample_valid_state(cfg, rng)
        u[i] = rng.uniform(-cfg.max_action, cfg.max_action, size=2)
        noise = rng.normal(0.0, cfg.noise_sigma, size=2)
        s_next[i] = step(cfg, s[i], u[i], noise)
        x[i] = render(cfg, s[i])
        x_next[i] = render(cfg, s_next[i])
    meta = {"env": "planar", "n": n, "sigma": cfg.noise_sigma, "seed": seed,
            "env_config": cfg.to_dict()}
    return Dataset(x, u, x_next, s, s_next, meta)


class PlanarEnv:
    """Stateful wrapper used by the control loop; owns its noise stream."""

    def __init__(self, cfg: EnvConfig, state, seed: int = 0):
        if not is_valid(cfg, state):
            raise ValueError(f"invalid start state {state}")
        self.cfg = cfg
        self.state = np.asarray(state, dtype=np.float64).copy()
        self.rng = np.random.default_rng(seed)

    def observe(self) -> np.ndarray:
        return render(self.cfg, self.state)

    def apply(self, u) -> np.ndarray:
        noise = self.rng.normal(0.0, self.cfg.noise_sigma, size=2)
        self.state = step(self.cfg, self.state, u, noise)
        return self.observe()
