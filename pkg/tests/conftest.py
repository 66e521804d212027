"""Shared fixtures: pretrained experts, small fitted policies, and the
acceptance summary hook that prints one line per acceptance criterion."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from unfoldrl.envs import ENV_NAMES, make_env
from unfoldrl.experts import load_pretrained
from unfoldrl.fitters import ClassSpec, LabeledSet, fit

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def experts():
    return {name: load_pretrained(name) for name in ENV_NAMES}


@pytest.fixture(scope="session")
def cartpole_expert(experts):
    return experts["CartPole"]


def collect_states(env_name: str, expert, n: int, seed: int = 0) -> np.ndarray:
    """States visited by the expert, for fitting small test policies."""
    env = make_env(env_name)
    states = []
    episode = 0
    while len(states) < n:
        s = env.reset(seed=seed * 7 + episode)
        episode += 1
        done = False
        while not done and len(states) < n:
            states.append(s)
            res = env.step(expert.act(s))
            s = res.state
            done = res.terminated or res.truncated
    return np.asarray(states)


@pytest.fixture(scope="session")
def cartpole_data(cartpole_expert):
    states = collect_states("CartPole", cartpole_expert, 1500)
    labels = np.array([cartpole_expert.act(s) for s in states])
    return LabeledSet(states, labels, np.ones(len(states)))


@pytest.fixture(scope="session")
def cartpole_students(cartpole_data):
    """One small fitted policy per class, for reuse across test modules."""
    specs = [
        ClassSpec("linear"),
        ClassSpec("axis_tree", 8),
        ClassSpec("oblique_tree", 8),
        ClassSpec("relu_mlp", (4, 4)),
    ]
    return {
        spec.label(): fit(cartpole_data, "classify", spec, seed=3, n_classes=2)
        for spec in specs
    }
