import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rce import planar
from rce.planar import (EnvConfig, PlanarEnv, collides, generate_dataset, is_valid, render,
                        sample_valid_state, step)

CFG = EnvConfig()


def square_disc_overlap_oracle(s, center, half, radius, n=401):
    """Dense sampling of the square; true if any sample lies strictly inside the disc."""
    xs = np.linspace(s[0] - half, s[0] + half, n)
    ys = np.linspace(s[1] - half, s[1] + half, n)
    gx, gy = np.meshgrid(xs, ys)
    return bool(np.any((gx - center[0]) ** 2 + (gy - center[1]) ** 2 < radius ** 2))


def test_step_examples():
    s = np.array([20.0, 14.0])
    np.testing.assert_array_equal(step(CFG, s, [0.0, 0.0], [0.0, 0.0]), s)
    np.testing.assert_array_equal(step(CFG, [20.0, 20.0], [1.0, 0.0], [0.0, 0.0]), [21.0, 20.0])
    # per-axis clip at max_action
    np.testing.assert_array_equal(step(CFG, [20.0, 30.0], [10.0, -10.0], [0, 0]), [23.0, 27.0])
    # walls project rather than reject
    np.testing.assert_array_equal(step(CFG, [3.0, 14.0], [-3.0, 0.0], [0, 0]), [2.0, 14.0])


def test_blocked_move_is_rejected():
    s = np.array([9.0, 8.0])  # left of the obstacle at (13.5, 8)
    assert is_valid(CFG, s)
    assert collides(CFG, s + [3.0, 0.0])
    np.testing.assert_array_equal(step(CFG, s, [3.0, 0.0], [0.0, 0.0]), s)


def test_collision_matches_geometric_oracle():
    rng = np.random.default_rng(0)
    center = (13.5, 8.0)
    for _ in range(300):
        s = np.array(center) + rng.uniform(-6, 6, size=2)
        # keep clear of the exact boundary where sampling resolution matters
        nx = np.clip(center[0], s[0] - 2, s[0] + 2)
        ny = np.clip(center[1], s[1] - 2, s[1] + 2)
        if abs(np.hypot(center[0] - nx, center[1] - ny) - 2.5) < 0.05:
            continue
        only = EnvConfig(obstacle_centers=(center,))
        assert collides(only, s) == square_disc_overlap_oracle(s, center, 2.0, 2.5)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(2, 38), y=st.floats(2, 38), ux=st.floats(-50, 50), uy=st.floats(-50, 50),
       nx=st.floats(-20, 20), ny=st.floats(-20, 20))
def test_step_never_leaves_valid_set(x, y, ux, uy, nx, ny):
    s = np.array([x, y])
    if not is_valid(CFG, s):
        return
    assert is_valid(CFG, step(CFG, s, [ux, uy], [nx, ny]))


def test_render_pixel_count_and_obstacles():
    img = render(CFG, [20.0, 14.0])
    assert img.shape == (1600,) and set(np.unique(img)) <= {0.0, 1.0}
    agent = img - planar.obstacle_image(CFG)
    assert agent.sum() == 16
    grid = agent.reshape(40, 40)
    rows, cols = np.nonzero(grid)
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (12, 15, 18, 21)
    assert np.array_equal(render(CFG, [20.0, 14.0]), img)


def test_render_backends_agree():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = sample_valid_state(CFG, rng)
        args = (s[0], s[1], 40, 2.0, CFG.obstacles, 2.5)
        np.testing.assert_array_equal(planar._render_numpy(*args),
                                      planar._render_loops.py_func(*args))
        np.testing.assert_array_equal(planar._render_numpy(*args), render(CFG, s))


def integer_states():
    return [np.array([x, y], float) for x in range(2, 39) for y in range(2, 39)
            if is_valid(CFG, (x, y))]


def test_distinct_states_give_distinct_images():
    states = integer_states()
    images = {render(CFG, s).tobytes() for s in states}
    assert len(images) == len(states)


def test_correlation_decoding_recovers_position():
    """Argmax of the agent image against a 4x4 box filter is the square's corner."""
    obstacles = planar.obstacle_image(CFG).reshape(40, 40)
    for s in integer_states()[::7]:
        agent = render(CFG, s).reshape(40, 40) - obstacles
        agent = np.clip(agent, 0, 1)
        score = np.zeros((37, 37))
        for r in range(37):
            for c in range(37):
                score[r, c] = agent[r:r + 4, c:c + 4].sum()
        r, c = np.unravel_index(np.argmax(score), score.shape)
        assert (c + 2, r + 2) == (s[0], s[1])


def test_dataset_shapes_determinism_and_noise_free_steps():
    d1 = generate_dataset(CFG, 200, 7)
    d2 = generate_dataset(CFG, 200, 7)
    assert d1.x.shape == (200, 1600) and d1.u.shape == (200, 2)
    for name in ("x", "u", "x_next", "s", "s_next"):
        assert np.array_equal(getattr(d1, name), getattr(d2, name))
    assert np.all(np.abs(d1.u) <= 3.0)
    for i in range(200):
        np.testing.assert_array_equal(d1.s_next[i], step(CFG, d1.s[i], d1.u[i], [0, 0]))
        assert is_valid(CFG, d1.s[i])
        np.testing.assert_array_equal(d1.x[i], render(CFG, d1.s[i]))
    assert d1.meta["seed"] == 7 and d1[3].x_t is not None
    with pytest.raises(ValueError):
        generate_dataset(CFG, 0, 0)


def test_noise_moments():
    """Accepted interior moves have additive noise with std sigma."""
    sigma = 2.0
    cfg = EnvConfig(obstacle_centers=(), noise_sigma=sigma)
    rng = np.random.default_rng(3)
    n = 100_000
    noise = rng.normal(0.0, sigma, size=(n, 2))
    u = rng.uniform(-3, 3, size=(n, 2))
    s = np.full(2, 20.0)
    out = np.array([step(cfg, s, u[i], noise[i]) for i in range(n)])
    resid = out - s - u
    np.testing.assert_allclose(resid.mean(axis=0), 0.0, atol=0.05 * sigma)
    np.testing.assert_allclose(resid.std(axis=0), sigma, rtol=0.05)


def test_env_config_validation_and_round_trip():
    assert EnvConfig.from_dict(CFG.to_dict()) == CFG
    assert CFG.with_sigma(2.0).noise_sigma == 2.0
    with pytest.raises(ValueError):
        EnvConfig(max_action=0.0)
    with pytest.raises(ValueError):
        EnvConfig(obstacle_centers=((1.0, 20.0),))
    with pytest.raises(ValueError):
        EnvConfig(noise_sigma=-1.0)


def test_planar_env_wrapper():
    env = PlanarEnv(CFG, [20.0, 14.0], seed=0)
    x = env.apply([1.0, 1.0])
    np.testing.assert_array_equal(env.state, [21.0, 15.0])
    np.testing.assert_array_equal(x, render(CFG, [21.0, 15.0]))
    with pytest.raises(ValueError):
        PlanarEnv(CFG, [13.5, 8.0])
