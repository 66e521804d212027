"""Expert policies the imitation step distills from.

Discrete envs get a double-DQN value network; continuous envs get an actor
found by the cross-entropy method over ReluMlp parameters.  Both trainers
gate on a 20-episode greedy evaluation against the env's training target and
raise ExpertTrainingError when the step budget runs out first.

Pre-trained checkpoints live in the experts_store package directory so the
pipeline runs without the training budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import nn
from .envs import Discrete, Env, make_env, rollout
from .errors import ExpertTrainingError, FormatError, UnsupportedError
from .policies import REGRESS, ReluMlp, LinearPolicy, dumps as policy_dumps, loads as policy_loads
from .rng import named_rng

EVAL_EPISODES = 20

# Return an expert must reach to count as solving the env, gymnasium
# convention.  Two of the verbatim table thresholds stored on EnvSpec have
# MountainCar and MountainCarContinuous swapped; see README.
TRAIN_TARGETS = {
    "CartPole": 490.0,
    "MountainCar": -110.0,
    "MountainCarContinuous": 90.0,
    "Acrobot": -100.0,
    "Pendulum": -400.0,
}


@dataclass
class QExpert:
    """Greedy policy over a state -> per-action Q-value network."""

    q_net: ReluMlp
    env_name: str = ""
    eval_return: float = float("nan")

    def q_values(self, state) -> np.ndarray:
        out, _ = nn.forward(self.q_net.layers, np.asarray(state, dtype=np.float64))
        return out

    def act(self, state) -> int:
        return int(np.argmax(self.q_values(state)))


@dataclass
class ContinuousExpert:
    """Deterministic actor mapping state to an action vector."""

    actor: ReluMlp | LinearPolicy
    env_name: str = ""
    eval_return: float = float("nan")

    def act(self, state) -> np.ndarray:
        return self.actor.predict(state)


Expert = QExpert | ContinuousExpert


def importance_weight(expert, state) -> float:
    """Worst-case regret of acting in this state: max_a Q - min_a Q."""
    if not isinstance(expert, QExpert):
        raise UnsupportedError(
            "importance weights need per-action Q values; continuous experts have none"
        )
    q = expert.q_values(state)
    return float(q.max() - q.min())


def evaluate(expert, env: Env, episodes: int = EVAL_EPISODES, seed: int = 0) -> float:
    """Mean greedy return over fresh seeded episodes."""
    stats = rollout(env, expert.act, episodes, seed=seed)
    return float(np.mean(stats.returns))


# ---------------------------------------------------------------------------
# double DQN for discrete envs
# ---------------------------------------------------------------------------


class _Replay:
    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, dim))
        self.discounts = np.zeros(capacity)  # gamma^n, 0 when terminal
        self.size = 0
        self.pos = 0

    def push(self, s, a, r, s2, discount):
        i = self.pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.discounts[i] = discount
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=batch)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.discounts[idx])


def train_q_expert(env: Env, budget: int = 400_000, seed: int = 0,
                   hidden=(64, 64), gamma: float = 0.99, n_step: int = 1,
                   target_return: float | None = None) -> QExpert:
    """Double DQN with a replay buffer and a hard-copied target network.

    Raises ExpertTrainingError if the greedy policy never reaches the target
    return within the env-step budget.
    """
    spec = env.spec
    if not isinstance(spec.action_kind, Discrete):
        raise UnsupportedError("q expert needs a discrete action space")
    n_actions = spec.action_kind.n
    if target_return is None:
        target_return = TRAIN_TARGETS[spec.name]

    rng = named_rng("dqn", spec.name, seed)
    layers = nn.he_uniform_init([spec.state_dim, *hidden, n_actions], rng)
    target = [(w.copy(), b.copy()) for w, b in layers]
    opt = nn.Adam(layers, lr=1e-3)
    buf = _Replay(50_000, spec.state_dim)
    eval_env = make_env(spec.name)

    warmup = 1_000
    batch = 64
    target_every = 500
    eval_every = 5_000
    eps_hi, eps_lo = 1.0, 0.05
    decay = max(budget // 2, 1)

    def greedy(s):
        out, _ = nn.forward(layers, s)
        return int(np.argmax(out))

    steps = 0
    episode = 0
    best = -np.inf
    while steps < budget:
        s = env.reset(seed=int(rng.integers(2 ** 31)))
        episode += 1
        pending = []  # (state, action, reward) awaiting n-step backup
        while True:
            eps = max(eps_lo, eps_hi - (eps_hi - eps_lo) * steps / decay)
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = greedy(s)
            res = env.step(a)
            steps += 1
            pending.append((s, a, res.reward))
            if len(pending) == n_step:
                s0, a0, _ = pending[0]
                ret = sum(r * gamma ** i for i, (_, _, r) in enumerate(pending))
                buf.push(s0, a0, ret, res.state,
                         0.0 if res.terminated else gamma ** len(pending))
                pending.pop(0)
            if res.terminated or res.truncated:
                # flush the tail; bootstrap unless truly terminal
                while pending:
                    s0, a0, _ = pending[0]
                    ret = sum(r * gamma ** i for i, (_, _, r) in enumerate(pending))
                    buf.push(s0, a0, ret, res.state,
                             0.0 if res.terminated else gamma ** len(pending))
                    pending.pop(0)
            s = res.state

            if buf.size >= warmup:
                bs, ba, br, bs2, bdisc = buf.sample(batch, rng)
                q2_online, _ = nn.forward(layers, bs2)
                a_star = np.argmax(q2_online, axis=1)
                q2_target, _ = nn.forward(target, bs2)
                td_target = br + bdisc * q2_target[np.arange(batch), a_star]
                q, acts = nn.forward(layers, bs)
                dout = np.zeros_like(q)
                rows = np.arange(batch)
                dout[rows, ba] = (q[rows, ba] - td_target) / batch
                grads = nn.backward(layers, acts, dout)
                layers = opt.step(layers, grads)
            if steps % target_every == 0:
                target = [(w.copy(), b.copy()) for w, b in layers]
            if steps % eval_every == 0 and buf.size >= warmup:
                expert = QExpert(ReluMlp([(w.copy(), b.copy()) for w, b in layers], REGRESS), spec.name)
                ret = evaluate(expert, eval_env, seed=seed)
                best = max(best, ret)
                if ret >= target_return:
                    expert.eval_return = ret
                    return expert
            if res.terminated or res.truncated or steps >= budget:
                break

    raise ExpertTrainingError(
        f"{spec.name}: budget {budget} exhausted; best eval return {best:.1f} "
        f"< target {target_return}"
    )


# ---------------------------------------------------------------------------
# cross-entropy method for continuous envs
# ---------------------------------------------------------------------------


def _flat_size(sizes) -> int:
    return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))


def _unflatten(theta: np.ndarray, sizes) -> list:
    layers = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = theta[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = theta[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def train_continuous_expert(env: Env, budget: int = 6_000_000, seed: int = 0,
                            hidden=(8, 8), population: int = 64,
                            elite_frac: float = 0.125, eval_rollouts: int = 3,
                            target_return: float | None = None) -> ContinuousExpert:
    """Cross-entropy method over the actor's flattened parameters.

    All candidates in an iteration share the same episode seeds so elite
    selection compares policies, not initial-state luck; the previous best
    candidate survives into the next population.
    """
    spec = env.spec
    if isinstance(spec.action_kind, Discrete):
        raise UnsupportedError("continuous expert needs a continuous action space")
    act_dim = spec.action_kind.dim
    if target_return is None:
        target_return = TRAIN_TARGETS[spec.name]

    sizes = [spec.state_dim, *hidden, act_dim]
    dim = _flat_size(sizes)
    rng = named_rng("cem", spec.name, seed)
    mean = np.zeros(dim)
    std = np.full(dim, 1.0)
    n_elite = max(2, int(round(population * elite_frac)))
    eval_env = make_env(spec.name)

    steps = 0
    iteration = 0
    best = -np.inf
    best_theta = None
    while steps < budget:
        iteration += 1
        thetas = mean + std * rng.normal(size=(population, dim))
        if best_theta is not None:
            thetas[0] = best_theta
        iter_seed = int(rng.integers(2 ** 31))
        scores = np.full(population, -np.inf)
        for c in range(population):
            actor = ReluMlp(_unflatten(thetas[c], sizes), REGRESS)
            stats = rollout(env, actor.predict, eval_rollouts, seed=iter_seed)
            scores[c] = np.mean(stats.returns)
            steps += int(np.sum(stats.lengths))
            if steps >= budget:
                break
        order = np.argsort(-scores)
        elites = thetas[order[:n_elite]]
        best_theta = thetas[order[0]]
        mean = elites.mean(axis=0)
        # decaying noise floor keeps early exploration alive, then lets the
        # distribution sharpen
        std = elites.std(axis=0) + max(0.01, 0.5 / iteration)

        candidates = [mean]
        if scores[order[0]] >= target_return:
            candidates.append(best_theta)
        for theta in candidates:
            cand = ContinuousExpert(ReluMlp(_unflatten(theta, sizes), REGRESS), spec.name)
            ret = evaluate(cand, eval_env, seed=seed)
            steps += EVAL_EPISODES * spec.max_steps  # charge eval pessimistically
            best = max(best, ret)
            if ret >= target_return:
                cand.eval_return = ret
                return cand

    raise ExpertTrainingError(
        f"{spec.name}: budget {budget} exhausted; best eval return {best:.1f} "
        f"< target {target_return}"
    )


# ---------------------------------------------------------------------------
# checkpoint files: metadata header + policy-core serialization
# ---------------------------------------------------------------------------

_MAGIC = "unfoldrl-expert v1"


def save_expert(expert: Expert, path) -> None:
    kind = "q" if isinstance(expert, QExpert) else "actor"
    net = expert.q_net if isinstance(expert, QExpert) else expert.actor
    header = [
        _MAGIC,
        f"env {expert.env_name}",
        f"kind {kind}",
        f"eval_return {expert.eval_return!r}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(header) + "\n" + policy_dumps(net))


def load_expert(path) -> Expert:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    if len(lines) < 4 or lines[0] != _MAGIC:
        raise FormatError("not an expert checkpoint")
    try:
        env_name = lines[1].split(" ", 1)[1]
        kind = lines[2].split(" ", 1)[1]
        eval_return = float(lines[3].split(" ", 1)[1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed expert header: {exc}") from None
    net = policy_loads("\n".join(lines[4:]) + "\n")
    if kind == "q":
        return QExpert(net, env_name, eval_return)
    if kind == "actor":
        return ContinuousExpert(net, env_name, eval_return)
    raise FormatError(f"unknown expert kind {kind!r}")


def pretrained_path(env_name: str):
    return resources.files("unfoldrl").joinpath("experts_store", f"{env_name}.txt")


def load_pretrained(env_name: str) -> Expert:
    """Load the checkpoint shipped with the package."""
    path = pretrained_path(env_name)
    if not path.is_file():
        raise FileNotFoundError(f"no pretrained expert for {env_name!r}")
    return load_expert(path)
