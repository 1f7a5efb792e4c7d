import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmplab.env import EnvSpec, EnvState, angle_wrap, make_env, reset, step

REWARD_FLOOR = -(math.pi**2 + 0.1 * 64 + 0.001 * 4)


def test_bandit_reset_is_uniform():
    spec = make_env("quadratic-bandit")
    rng = np.random.default_rng(0)
    draws = np.array([reset(spec, rng)[1][0] for _ in range(20_000)])
    assert draws.min() >= -1 and draws.max() <= 1
    counts, _ = np.histogram(draws, bins=10, range=(-1, 1))
    expected = len(draws) / 10
    sd = math.sqrt(len(draws) * 0.1 * 0.9)
    assert np.all(np.abs(counts - expected) < 4 * sd)


def test_point_mass_starts_at_origin():
    state, obs = reset(make_env("sparse-point-mass"), np.random.default_rng(3))
    assert obs.tolist() == [0.0, 0.0] and state.t == 0


@pytest.mark.parametrize("name", ["pendulum", "sparse-point-mass", "quadratic-bandit"])
def test_reset_deterministic(name):
    spec = make_env(name)
    a = reset(spec, np.random.default_rng(11))
    b = reset(spec, np.random.default_rng(11))
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[0].x, b[0].x)


def test_pendulum_equilibrium():
    spec = make_env("pendulum")
    state, obs, r, done = step(spec, EnvState(np.array([0.0, 0.0])), np.array([0.0]))
    assert state.x.tolist() == [0.0, 0.0]
    assert obs.tolist() == [1.0, 0.0, 0.0]
    assert r == 0.0 and not done


def test_pendulum_one_step_by_hand():
    spec = make_env("pendulum")
    th, thdot, u = 0.3, -0.5, 1.5
    state, obs, r, _ = step(spec, EnvState(np.array([th, thdot])), np.array([u]))
    new_thdot = thdot + (3 * 10 / 2 * math.sin(th) + 3 * u) * 0.05
    assert state.x[1] == pytest.approx(new_thdot, abs=1e-15)
    assert state.x[0] == pytest.approx(th + new_thdot * 0.05, abs=1e-15)
    assert r == pytest.approx(-(th**2 + 0.1 * thdot**2 + 0.001 * u**2), abs=1e-15)


def test_bandit_reward_closed_form():
    spec = make_env("quadratic-bandit")
    _, _, r, done = step(spec, EnvState(np.array([0.6])), np.array([-0.2]))
    assert r == pytest.approx(-((-0.2 - 0.3) ** 2), abs=1e-15)
    assert done


def test_point_mass_reaches_goal():
    spec = make_env("sparse-point-mass")
    state, obs, r, done = step(spec, EnvState(np.array([0.78, 0.78])), np.array([1.0, 1.0]))
    np.testing.assert_allclose(obs, [0.83, 0.83], atol=1e-12)
    assert r == 1.0 and done


def test_point_mass_far_from_goal_is_silent():
    spec = make_env("sparse-point-mass")
    _, obs, r, done = step(spec, EnvState(np.zeros(2)), np.array([1.0, -1.0]))
    np.testing.assert_allclose(obs, [0.05, -0.05])
    assert r == 0.0 and not done


def test_actions_clipped_and_counted():
    spec = make_env("pendulum")
    s0 = EnvState(np.array([0.0, 0.0]))
    a, _, ra, _ = step(spec, s0, np.array([5.0]))
    b, _, rb, _ = step(spec, s0, np.array([2.0]))
    assert np.array_equal(a.x, b.x) and ra == rb
    assert a.clip_count == 1 and b.clip_count == 0


def test_non_finite_action_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        step(make_env("pendulum"), EnvState(np.zeros(2)), np.array([np.nan]))


def test_wrong_action_dim_rejected():
    with pytest.raises(ValueError):
        step(make_env("sparse-point-mass"), EnvState(np.zeros(2)), np.array([0.1]))


def test_spec_validation():
    with pytest.raises(ValueError):
        EnvSpec("pendulum", 3, 1, np.array([1.0]), np.array([-1.0]), 200)
    with pytest.raises(ValueError):
        EnvSpec("pendulum", 3, 1, np.array([-1.0]), np.array([1.0]), 0)
    with pytest.raises(ValueError):
        make_env("cartpole")


def test_angle_wrap_range():
    for th in np.linspace(-20, 20, 401):
        w = angle_wrap(th)
        assert -math.pi <= w < math.pi
        assert math.isclose(math.cos(w), math.cos(th), abs_tol=1e-12)


@pytest.mark.parametrize("name", ["pendulum", "sparse-point-mass", "quadratic-bandit"])
def test_episode_length_bounded(name):
    spec = make_env(name)
    rng = np.random.default_rng(0)
    state, _ = reset(spec, rng)
    for k in range(spec.max_steps + 5):
        state, _, _, done = step(spec, state, rng.uniform(spec.low, spec.high))
        assert state.t <= spec.max_steps
        if done:
            break
    assert done


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(th=finite, thdot=st.floats(-8, 8), u=st.floats(-10, 10))
def test_pendulum_invariants(th, thdot, u):
    spec = make_env("pendulum")
    s = EnvState(np.array([th, thdot]))
    a = step(spec, s, np.array([u]))
    b = step(spec, s, np.array([u]))
    assert np.array_equal(a[0].x, b[0].x) and a[2] == b[2]
    assert abs(a[0].x[1]) <= 8.0
    assert REWARD_FLOOR <= a[2] <= 0.0


@settings(max_examples=100, deadline=None)
@given(s=st.floats(-1, 1))
def test_bandit_optimum_is_zero(s):
    spec = make_env("quadratic-bandit")
    _, _, r, _ = step(spec, EnvState(np.array([s])), np.array([0.5 * s]))
    assert r == 0.0
