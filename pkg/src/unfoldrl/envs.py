"""Native classic-control environments.

Five tasks implemented directly from the standard gymnasium equations:
CartPole, MountainCar, MountainCarContinuous, Acrobot and Pendulum.  Each
environment owns a named counter-based random stream, so identical seeds
give bit-identical trajectories under identical action sequences.

Emitted observations are clipped to the finite ``state_bounds`` documented
in each spec.  Where gymnasium declares a dimension unbounded (the CartPole
velocities) the bound is set to twice the largest magnitude observed over
10k random-policy steps, wide enough that the clip never binds on real
trajectories; the finite box exists so query sampling has a compact domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ActionError
from .rng import named_rng


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Continuous:
    dim: int
    low: tuple
    high: tuple


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_kind: Discrete | Continuous
    state_bounds: tuple  # ((lo, hi), ...) one pair per state dimension
    solve_threshold: float
    max_steps: int

    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.state_bounds, dtype=np.float64)


@dataclass(frozen=True)
class StepResult:
    state: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


@dataclass
class EpisodeStats:
    returns: list = field(default_factory=list)
    lengths: list = field(default_factory=list)


# CartPole cart/pole velocities are unbounded in gymnasium; these are the
# documented clip ranges: 2x the max magnitude over 10k random-policy steps
# (measured 2.827 and 2.941), rounded up.
CARTPOLE_XDOT_CLIP = 5.7
CARTPOLE_THETADOT_CLIP = 5.9


class Env:
    """Base class: seeded resets, step counting, truncation at max_steps."""

    spec: EnvSpec

    def __init__(self, seed: int = 0):
        self._seed = seed
        self._episode = 0
        self._elapsed = 0
        self._state: np.ndarray | None = None

    # -- subclass hooks -------------------------------------------------
    def _sample_initial(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, action) -> tuple[np.ndarray, float, bool]:
        """Advance internal state; return (observation, reward, terminated)."""
        raise NotImplementedError

    # -- public API ------------------------------------------------------
    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is None:
            rng = named_rng(self.spec.name, self._seed, "reset", self._episode)
        else:
            rng = named_rng(self.spec.name, "reset", seed)
        self._episode += 1
        self._elapsed = 0
        self._state = self._sample_initial(rng)
        return self._observe()

    def step(self, action) -> StepResult:
        if self._state is None:
            raise RuntimeError("step before reset")
        action = self._check_action(action)
        obs, reward, terminated = self._transition(action)
        self._elapsed += 1
        truncated = (not terminated) and self._elapsed >= self.spec.max_steps
        return StepResult(self._clip_obs(obs), float(reward), terminated, truncated)

    def _observe(self) -> np.ndarray:
        return self._clip_obs(np.array(self._state, dtype=np.float64))

    def _clip_obs(self, obs: np.ndarray) -> np.ndarray:
        b = self.spec.bounds_array()
        return np.clip(obs, b[:, 0], b[:, 1])

    def _check_action(self, action):
        kind = self.spec.action_kind
        if isinstance(kind, Discrete):
            a = int(action)
            if not 0 <= a < kind.n:
                raise ActionError(f"action {action!r} not in [0, {kind.n})")
            return a
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (kind.dim,):
            raise ActionError(f"expected action of dim {kind.dim}, got shape {a.shape}")
        return np.clip(a, np.asarray(kind.low), np.asarray(kind.high))


class CartPole(Env):
    """Pole balancing on a cart; Euler integration, 0.02 s steps."""

    spec = EnvSpec(
        name="CartPole",
        state_dim=4,
        action_kind=Discrete(2),
        state_bounds=(
            (-4.8, 4.8),
            (-CARTPOLE_XDOT_CLIP, CARTPOLE_XDOT_CLIP),
            (-0.41887902047863906, 0.41887902047863906),
            (-CARTPOLE_THETADOT_CLIP, CARTPOLE_THETADOT_CLIP),
        ),
        solve_threshold=490.0,
        max_steps=500,
    )

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masspole + masscart
    length = 0.5  # half the pole length
    polemass_length = masspole * length
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    def _sample_initial(self, rng):
        return rng.uniform(low=-0.05, high=0.05, size=(4,))

    def _transition(self, action):
        x, x_dot, theta, theta_dot = self._state
        force = self.force_mag if action == 1 else -self.force_mag
        costheta = math.cos(theta)
        sintheta = math.sin(theta)
        temp = (force + self.polemass_length * theta_dot**2 * sintheta) / self.total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta**2 / self.total_mass)
        )
        xacc = temp - self.polemass_length * thetaacc * costheta / self.total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * xacc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * thetaacc
        self._state = np.array([x, x_dot, theta, theta_dot])
        terminated = (
            x < -self.x_threshold
            or x > self.x_threshold
            or theta < -self.theta_threshold
            or theta > self.theta_threshold
        )
        return self._state.copy(), 1.0, terminated


class MountainCar(Env):
    """Underpowered car climbing a hill; three discrete thrust actions."""

    spec = EnvSpec(
        name="MountainCar",
        state_dim=2,
        action_kind=Discrete(3),
        state_bounds=((-1.2, 0.6), (-0.07, 0.07)),
        solve_threshold=90.0,  # stored verbatim from the source table; see README
        max_steps=200,
    )

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5
    goal_velocity = 0.0
    force = 0.001
    gravity = 0.0025

    def _sample_initial(self, rng):
        return np.array([rng.uniform(low=-0.6, high=-0.4), 0.0])

    def _transition(self, action):
        position, velocity = self._state
        velocity += (action - 1) * self.force + math.cos(3 * position) * (-self.gravity)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        self._state = np.array([position, velocity])
        terminated = position >= self.goal_position and velocity >= self.goal_velocity
        return self._state.copy(), -1.0, terminated


class MountainCarContinuous(Env):
    """MountainCar with a continuous engine force and effort penalty."""

    spec = EnvSpec(
        name="MountainCarContinuous",
        state_dim=2,
        action_kind=Continuous(1, (-1.0,), (1.0,)),
        state_bounds=((-1.2, 0.6), (-0.07, 0.07)),
        solve_threshold=-110.0,  # stored verbatim from the source table; see README
        max_steps=999,
    )

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.45
    goal_velocity = 0.0
    power = 0.0015

    def _sample_initial(self, rng):
        return np.array([rng.uniform(low=-0.6, high=-0.4), 0.0])

    def _transition(self, action):
        position, velocity = self._state
        force = float(action[0])
        velocity += force * self.power - 0.0025 * math.cos(3 * position)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        self._state = np.array([position, velocity])
        terminated = position >= self.goal_position and velocity >= self.goal_velocity
        reward = (100.0 if terminated else 0.0) - 0.1 * force**2
        return self._state.copy(), reward, terminated


def _wrap(x: float, lo: float, hi: float) -> float:
    diff = hi - lo
    while x > hi:
        x -= diff
    while x < lo:
        x += diff
    return x


def _rk4_step(derivs, y0: np.ndarray, dt: float) -> np.ndarray:
    k1 = np.asarray(derivs(y0))
    k2 = np.asarray(derivs(y0 + dt / 2.0 * k1))
    k3 = np.asarray(derivs(y0 + dt / 2.0 * k2))
    k4 = np.asarray(derivs(y0 + dt * k3))
    return y0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class Acrobot(Env):
    """Two-link pendulum swing-up; torque on the middle joint, RK4 dynamics."""

    spec = EnvSpec(
        name="Acrobot",
        state_dim=6,
        action_kind=Discrete(3),
        state_bounds=(
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-4 * math.pi, 4 * math.pi),
            (-9 * math.pi, 9 * math.pi),
        ),
        solve_threshold=-100.0,
        max_steps=500,
    )

    dt = 0.2
    link_length_1 = 1.0
    link_mass_1 = 1.0
    link_mass_2 = 1.0
    link_com_1 = 0.5
    link_com_2 = 0.5
    link_moi = 1.0
    max_vel_1 = 4 * math.pi
    max_vel_2 = 9 * math.pi
    torques = (-1.0, 0.0, 1.0)

    def _sample_initial(self, rng):
        # internal state (theta1, theta2, dtheta1, dtheta2)
        return rng.uniform(low=-0.1, high=0.1, size=(4,))

    def _observe(self):
        t1, t2, dt1, dt2 = self._state
        obs = np.array([math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), dt1, dt2])
        return self._clip_obs(obs)

    def _dsdt(self, s_augmented):
        m1, m2 = self.link_mass_1, self.link_mass_2
        l1 = self.link_length_1
        lc1, lc2 = self.link_com_1, self.link_com_2
        i1 = i2 = self.link_moi
        g = 9.8
        a = s_augmented[-1]
        theta1, theta2, dtheta1, dtheta2 = s_augmented[:-1]
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2
        )
        ddtheta2 = (
            a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2) - phi2
        ) / (m2 * lc2**2 + i2 - d2**2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return np.array([dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0])

    def _transition(self, action):
        torque = self.torques[action]
        s_augmented = np.append(self._state, torque)
        ns = _rk4_step(self._dsdt, s_augmented, self.dt)[:4]
        ns[0] = _wrap(ns[0], -math.pi, math.pi)
        ns[1] = _wrap(ns[1], -math.pi, math.pi)
        ns[2] = min(max(ns[2], -self.max_vel_1), self.max_vel_1)
        ns[3] = min(max(ns[3], -self.max_vel_2), self.max_vel_2)
        self._state = ns
        terminated = -math.cos(ns[0]) - math.cos(ns[1] + ns[0]) > 1.0
        reward = 0.0 if terminated else -1.0
        return self._observe(), reward, terminated


class Pendulum(Env):
    """Torque-limited pendulum swing-up; never terminates, truncates at the cap."""

    spec = EnvSpec(
        name="Pendulum",
        state_dim=3,
        action_kind=Continuous(1, (-2.0,), (2.0,)),
        state_bounds=((-1.0, 1.0), (-1.0, 1.0), (-8.0, 8.0)),
        solve_threshold=-400.0,
        max_steps=200,
    )

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    length = 1.0

    def _sample_initial(self, rng):
        # internal state (theta, theta_dot)
        return rng.uniform(low=(-math.pi, -1.0), high=(math.pi, 1.0))

    def _observe(self):
        th, thdot = self._state
        return self._clip_obs(np.array([math.cos(th), math.sin(th), thdot]))

    def _transition(self, action):
        th, thdot = self._state
        u = float(action[0])
        angle = ((th + math.pi) % (2 * math.pi)) - math.pi
        costs = angle**2 + 0.1 * thdot**2 + 0.001 * u**2
        newthdot = thdot + (3 * self.g / (2 * self.length) * math.sin(th) + 3.0 / (self.m * self.length**2) * u) * self.dt
        newthdot = min(max(newthdot, -self.max_speed), self.max_speed)
        newth = th + newthdot * self.dt
        self._state = np.array([newth, newthdot])
        return self._observe(), -costs, False


_ENVS = {
    "CartPole": CartPole,
    "MountainCar": MountainCar,
    "MountainCarContinuous": MountainCarContinuous,
    "Acrobot": Acrobot,
    "Pendulum": Pendulum,
}

ENV_NAMES = tuple(_ENVS)


def make_env(name: str, seed: int = 0) -> Env:
    """Instantiate a classic-control environment by name."""
    try:
        cls = _ENVS[name]
    except KeyError:
        raise NameError(f"unknown environment {name!r}; choose from {sorted(_ENVS)}") from None
    return cls(seed=seed)


def env_spec(name: str) -> EnvSpec:
    try:
        return _ENVS[name].spec
    except KeyError:
        raise NameError(f"unknown environment {name!r}; choose from {sorted(_ENVS)}") from None


def random_actor(spec: EnvSpec, seed: int = 0):
    """Uniform-random policy over the action space, with its own stream."""
    rng = named_rng(spec.name, "random-actor", seed)
    kind = spec.action_kind
    if isinstance(kind, Discrete):
        return lambda state: int(rng.integers(kind.n))
    low = np.asarray(kind.low)
    high = np.asarray(kind.high)
    return lambda state: rng.uniform(low, high)


def rollout(env: Env, actor, episodes: int, seed: int = 0) -> EpisodeStats:
    """Run ``episodes`` full episodes of ``actor`` and record returns/lengths."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    stats = EpisodeStats()
    for ep in range(episodes):
        state = env.reset(seed=_episode_seed(seed, ep))
        total = 0.0
        length = 0
        while True:
            res = env.step(actor(state))
            total += res.reward
            length += 1
            state = res.state
            if res.terminated or res.truncated:
                break
        stats.returns.append(total)
        stats.lengths.append(length)
    return stats


def _episode_seed(seed: int, episode: int) -> int:
    # spread (seed, episode) pairs over distinct reset streams
    return seed * 1_000_003 + episode
