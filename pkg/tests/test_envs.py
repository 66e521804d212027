"""Environment dynamics, termination rules, seeding, and rollout stats."""

import math

import numpy as np
import pytest

from unfoldrl.envs import (
    ENV_NAMES,
    CARTPOLE_THETADOT_CLIP,
    CARTPOLE_XDOT_CLIP,
    Continuous,
    Discrete,
    env_spec,
    make_env,
    random_actor,
    rollout,
)
from unfoldrl.errors import ActionError

EXPECTED_SPECS = {
    # name: (state_dim, action arity, solve threshold, max steps)
    "CartPole": (4, 2, 490.0, 500),
    "MountainCar": (2, 3, 90.0, 200),
    "MountainCarContinuous": (2, 1, -110.0, 999),
    "Acrobot": (6, 3, -100.0, 500),
    "Pendulum": (3, 1, -400.0, 200),
}


def test_spec_table():
    for name, (dim, arity, threshold, max_steps) in EXPECTED_SPECS.items():
        spec = env_spec(name)
        assert spec.state_dim == dim
        kind = spec.action_kind
        if isinstance(kind, Discrete):
            assert kind.n == arity
        else:
            assert isinstance(kind, Continuous) and kind.dim == arity
        assert spec.solve_threshold == threshold
        assert spec.max_steps == max_steps
        bounds = spec.bounds_array()
        assert bounds.shape == (dim, 2)
        assert np.all(bounds[:, 0] < bounds[:, 1])
        assert np.all(np.isfinite(bounds))


def test_unknown_env_name():
    with pytest.raises(NameError):
        make_env("Breakout")


def test_reset_deterministic():
    env = make_env("CartPole")
    a = env.reset(seed=0)
    b = env.reset(seed=0)
    assert np.array_equal(a, b)
    c = env.reset(seed=1)
    assert not np.array_equal(a, c)


def test_mountaincar_reset_range():
    env = make_env("MountainCar")
    for seed in range(50):
        s = env.reset(seed=seed)
        assert -0.6 <= s[0] <= -0.4
        assert s[1] == 0.0


def test_acrobot_reset_shape():
    s = make_env("Acrobot").reset(seed=3)
    assert s.shape == (6,)


def test_cartpole_one_step_dynamics_oracle():
    # independent transcription of the standard cart-pole Euler update
    env = make_env("CartPole")
    s = env.reset(seed=5)
    res = env.step(1)
    x, x_dot, theta, theta_dot = s
    force = 10.0
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    temp = (force + 0.05 * theta_dot**2 * sin_t) / 1.1
    theta_acc = (9.8 * sin_t - cos_t * temp) / (0.5 * (4.0 / 3.0 - 0.1 * cos_t**2 / 1.1))
    x_acc = temp - 0.05 * theta_acc * cos_t / 1.1
    expected = np.array([
        x + 0.02 * x_dot,
        x_dot + 0.02 * x_acc,
        theta + 0.02 * theta_dot,
        theta_dot + 0.02 * theta_acc,
    ])
    assert np.allclose(res.state, expected, rtol=0, atol=1e-12)
    assert res.reward == 1.0 and not res.terminated


def test_mountaincar_one_step_dynamics_oracle():
    env = make_env("MountainCar")
    s = env.reset(seed=9)
    res = env.step(2)
    velocity = s[1] + (2 - 1) * 0.001 + math.cos(3 * s[0]) * (-0.0025)
    velocity = min(max(velocity, -0.07), 0.07)
    position = min(max(s[0] + velocity, -1.2), 0.6)
    assert np.allclose(res.state, [position, velocity], rtol=0, atol=1e-12)
    assert res.reward == -1.0


def test_cartpole_terminates_on_angle():
    env = make_env("CartPole")
    env.reset(seed=0)
    res = None
    for _ in range(env.spec.max_steps):
        res = env.step(1)  # constant push tips the pole quickly
        if res.terminated:
            break
    assert res.terminated
    x, _, theta, _ = res.state
    assert abs(theta) > 12 * 2 * math.pi / 360 or abs(x) > 2.4


def test_mountaincar_terminates_at_goal(experts):
    env = make_env("MountainCar")
    expert = experts["MountainCar"]
    s = env.reset(seed=0)
    res = None
    for _ in range(env.spec.max_steps):
        res = env.step(expert.act(s))
        s = res.state
        if res.terminated:
            break
    assert res.terminated and s[0] >= 0.5


def test_pendulum_never_terminates():
    env = make_env("Pendulum")
    env.reset(seed=0)
    for step in range(env.spec.max_steps):
        res = env.step(np.array([2.0]))
        assert not res.terminated
    assert res.truncated and step == env.spec.max_steps - 1


def test_discrete_action_out_of_range():
    env = make_env("CartPole")
    env.reset(seed=0)
    with pytest.raises(ActionError):
        env.step(2)
    with pytest.raises(ActionError):
        env.step(-1)


def test_continuous_action_clipped():
    env = make_env("Pendulum")
    env.reset(seed=0)
    a = env.reset(seed=11)
    big = env.step(np.array([50.0])).state
    env.reset(seed=11)
    capped = env.step(np.array([2.0])).state
    assert np.array_equal(big, capped)
    assert a.shape == (3,)


def test_trajectory_determinism_bitwise():
    actions = np.random.default_rng(0).integers(0, 2, size=60)
    states = []
    for _ in range(2):
        env = make_env("CartPole")
        s = env.reset(seed=123)
        traj = [s]
        for a in actions:
            res = env.step(int(a))
            traj.append(res.state)
            if res.terminated or res.truncated:
                break
        states.append(np.concatenate(traj))
    assert np.array_equal(states[0], states[1])


def test_states_stay_inside_documented_bounds():
    for name in ENV_NAMES:
        env = make_env(name)
        bounds = env.spec.bounds_array()
        actor = random_actor(env.spec, seed=7)
        s = env.reset(seed=7)
        for _ in range(300):
            assert np.all(s >= bounds[:, 0] - 1e-12), name
            assert np.all(s <= bounds[:, 1] + 1e-12), name
            res = env.step(actor(s))
            s = res.state
            if res.terminated or res.truncated:
                s = env.reset(seed=int(s[0] * 1e6) % 1000)


def test_cartpole_velocity_clips_are_documented_constants():
    bounds = env_spec("CartPole").bounds_array()
    assert bounds[1, 1] == CARTPOLE_XDOT_CLIP
    assert bounds[3, 1] == CARTPOLE_THETADOT_CLIP


def test_rollout_constant_actor_pendulum():
    env = make_env("Pendulum")
    stats = rollout(env, lambda s: np.array([0.0]), 3, seed=5)
    assert len(stats.returns) == 3 and len(stats.lengths) == 3
    assert all(length == env.spec.max_steps for length in stats.lengths)


def test_rollout_deterministic():
    env = make_env("MountainCar")
    actor = random_actor(env.spec, seed=3)
    a = rollout(env, actor, 4, seed=9)
    b = rollout(make_env("MountainCar"), random_actor(env.spec, seed=3), 4, seed=9)
    assert a.returns == b.returns and a.lengths == b.lengths


def test_random_actor_far_below_threshold():
    env = make_env("CartPole")
    stats = rollout(env, random_actor(env.spec, seed=1), 100, seed=1)
    assert len(stats.returns) == 100
    assert float(np.mean(stats.returns)) < 100 < env.spec.solve_threshold


def test_truncation_only_at_max_steps():
    env = make_env("MountainCar")
    env.reset(seed=2)
    for step in range(1, env.spec.max_steps + 1):
        res = env.step(1)
        if res.truncated:
            assert step == env.spec.max_steps
        if res.terminated or res.truncated:
            break
    assert res.terminated or res.truncated
