"""Compiled kernels vs. their plain-Python bodies vs. a vectorized numpy version.

    python3 benchmarks/bench_kernels.py [--repeat N]

Run with RCE_NUMBA=0 to check that the package imports and runs without numba;
the "numba" column then times the plain functions too.
"""

import argparse
import time

import numpy as np

from rce import kernels, planar
from rce._accel import USE_NUMBA
from rce.model import ModelShape, init_params
from rce.planar import EnvConfig
from rce.planner import LatentModel, PlanConfig, rollout_reference


def best_of(fn, repeat):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def rollout_numpy(W0, b0, W1, b1, W2, b2, z0, U):
    """Same recursion with per-step numpy matmuls."""
    nz = z0.size
    Z = np.empty((U.shape[0] + 1, nz))
    Z[0] = z0
    for t, u in enumerate(U):
        h = np.maximum(np.concatenate([Z[t], u]) @ W0 + b0, 0.0)
        h = np.maximum(h @ W1 + b1, 0.0)
        o = h @ W2 + b2
        w, r = np.logaddexp(0.0, o[:nz]), np.logaddexp(0.0, o[nz:2 * nz])
        B = o[2 * nz:2 * nz + nz * U.shape[1]].reshape(nz, -1)
        c = o[2 * nz + nz * U.shape[1]:]
        A = np.eye(nz) - np.outer(w, r) / (1.0 + r @ w)
        Z[t + 1] = A @ Z[t] + B @ u + c
    return Z


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    model = LatentModel.from_params(init_params(ModelShape(), 0))
    z0, U = rng.normal(size=2), rng.uniform(-3, 3, (40, 2))
    cfg = PlanConfig()
    traj = rollout_reference(model, z0, U)
    goal = rng.normal(size=2)
    ric = (traj.A, traj.B, traj.offsets(), traj.latents, traj.actions, goal, cfg.Q, cfg.R,
           cfg.levenberg_mu0, cfg.levenberg_mu_max)
    env = EnvConfig()
    rend = (20.0, 14.0, env.arena_size, env.agent_half_width, env.obstacles, env.obstacle_radius)

    np.testing.assert_allclose(kernels.rollout(*model.weights, z0, U)[0],
                               rollout_numpy(*model.weights, z0, U), atol=1e-10)
    np.testing.assert_array_equal(planar._render_loops(*rend), planar._render_numpy(*rend))

    rows = [
        ("rollout H=40", lambda: kernels.rollout(*model.weights, z0, U),
         lambda: kernels.rollout.py_func(*model.weights, z0, U),
         lambda: rollout_numpy(*model.weights, z0, U)),
        ("riccati H=40", lambda: kernels.riccati(*ric), lambda: kernels.riccati.py_func(*ric),
         None),
        ("render 40x40", lambda: planar._render_loops(*rend),
         lambda: planar._render_loops.py_func(*rend), lambda: planar._render_numpy(*rend)),
    ]
    print(f"numba enabled: {USE_NUMBA}; best of {args.repeat}, microseconds")
    print(f"{'kernel':<14}{'numba':>12}{'py_func':>12}{'numpy':>12}{'speedup':>10}")
    for name, jit, py, vec in rows:
        tj, tp = best_of(jit, args.repeat), best_of(py, args.repeat)
        tv = best_of(vec, args.repeat) if vec else float("nan")
        print(f"{name:<14}{tj * 1e6:12.1f}{tp * 1e6:12.1f}{tv * 1e6:12.1f}{tp / tj:10.1f}x")


if __name__ == "__main__":
    main()
