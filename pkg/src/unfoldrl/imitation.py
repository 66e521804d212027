"""Distill experts into small policies: behavior cloning, DAgger, Q-DAgger.

One algorithm covers all three variants.  N rounds each collect floor(S/N)
transitions: round 1 walks the env with the expert, later rounds walk it with
the latest student, labels always come from the expert, and with importance
sampling each state is weighted by the expert's Q-value spread.  The student
is refitted on the union of all rounds after each round.
"""

from __future__ import annotations

import signal
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .envs import Discrete, Env, make_env, random_actor, rollout
from .errors import ConfigError, UnsupportedError
from .experts import QExpert, importance_weight
from .fitters import ClassSpec, LabeledSet, fit, MLP_HIDDEN_GRID, TREE_NODE_GRID
from .metrics import normalized_return
from .policies import CLASSIFY, REGRESS, Policy
from .rng import stream_key

VARIANTS = ("bc", "dagger", "qdagger")
DAGGER_ROUNDS = 5
DESK_SAMPLES = 20_000
PAPER_SAMPLE_BUDGETS = (50_000, 100_000)


@dataclass(frozen=True)
class ImitationConfig:
    """Knobs of the unified imitation algorithm."""

    n_iterations: int
    total_samples: int
    importance_sampling: bool
    class_spec: ClassSpec
    eval_episodes: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be >= 1")
        if self.total_samples < self.n_iterations:
            raise ConfigError("need at least one sample per round")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")

    @property
    def variant(self) -> str:
        if self.importance_sampling:
            return "qdagger"
        return "bc" if self.n_iterations == 1 else "dagger"

    @property
    def samples_per_round(self) -> int:
        return self.total_samples // self.n_iterations


def variant_config(variant: str, class_spec: ClassSpec,
                   total_samples: int = DESK_SAMPLES, seed: int = 0,
                   eval_episodes: int = 100,
                   n_iterations: int | None = None) -> ImitationConfig:
    """Standard configs: bc fits once, dagger/qdagger iterate."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    rounds = 1 if variant == "bc" else (n_iterations or DAGGER_ROUNDS)
    return ImitationConfig(
        n_iterations=rounds,
        total_samples=total_samples,
        importance_sampling=(variant == "qdagger"),
        class_spec=class_spec,
        eval_episodes=eval_episodes,
        seed=seed,
    )


@dataclass
class RunRecord:
    """One imitation run: who was trained, on what, and how it scored."""

    env: str
    variant: str
    class_label: str
    samples: int
    seed: int
    rep: int = 0
    returns: list = field(default_factory=list)
    mean_return: float = float("nan")
    normalized: float = float("nan")
    policy_ref: str = ""
    error: str = ""


def _collect(env: Env, behavior, expert, quota: int, weighted: bool, seed: int):
    states: list = []
    labels: list = []
    weights: list = []
    episode = 0
    while len(states) < quota:
        s = env.reset(seed=seed * 1_000_003 + episode)
        episode += 1
        while len(states) < quota:
            states.append(np.array(s, dtype=np.float64))
            labels.append(expert.act(s))
            weights.append(importance_weight(expert, s) if weighted else 1.0)
            res = env.step(behavior(s))
            s = res.state
            if res.terminated or res.truncated:
                break
    return LabeledSet(np.array(states), np.array(labels), np.array(weights))


def imitate(expert, env: Env, config: ImitationConfig,
            baselines: tuple | None = None) -> tuple[Policy, RunRecord]:
    """Run Algorithm: N collection+fit rounds, then evaluate the student.

    baselines: optional (random_return, expert_return) pair for the
    normalized score; computed here when absent.
    """
    if config.importance_sampling and not isinstance(expert, QExpert):
        raise UnsupportedError(
            "importance sampling weights need a Q expert (discrete actions)"
        )
    spec = env.spec
    task = CLASSIFY if isinstance(spec.action_kind, Discrete) else REGRESS
    n_classes = spec.action_kind.n if task == CLASSIFY else None
    quota = config.samples_per_round
    base = stream_key("imitate", spec.name, config.variant,
                      config.class_spec.label(), config.seed)

    student: Policy | None = None
    data: LabeledSet | None = None
    for rnd in range(config.n_iterations):
        behavior = expert.act if rnd == 0 else student.predict
        fresh = _collect(env, behavior, expert, quota,
                         config.importance_sampling,
                         seed=(base + rnd) % 2 ** 31)
        data = fresh if data is None else LabeledSet.concat([data, fresh])
        student = fit(data, task, config.class_spec,
                      seed=(base + 7919 * (rnd + 1)) % 2 ** 31,
                      n_classes=n_classes)

    stats = rollout(env, student.predict, config.eval_episodes,
                    seed=(base + 104729) % 2 ** 31)
    mean = float(np.mean(stats.returns))
    if baselines is None:
        baselines = env_baselines(spec.name, expert, config.eval_episodes,
                                  seed=config.seed)
    record = RunRecord(
        env=spec.name,
        variant=config.variant,
        class_label=config.class_spec.label(),
        samples=config.total_samples,
        seed=config.seed,
        returns=list(map(float, stats.returns)),
        mean_return=mean,
        normalized=normalized_return(mean, baselines[0], baselines[1]),
    )
    return student, record


def env_baselines(env_name: str, expert, episodes: int = 100,
                  seed: int = 0) -> tuple[float, float]:
    """(random policy return, expert return), means over seeded episodes."""
    env = make_env(env_name)
    rand = rollout(env, random_actor(env.spec, seed=seed), episodes,
                   seed=stream_key("baseline-random", env_name, seed) % 2 ** 31)
    expe = rollout(env, expert.act, episodes,
                   seed=stream_key("baseline-expert", env_name, seed) % 2 ** 31)
    return float(np.mean(rand.returns)), float(np.mean(expe.returns))


def default_grid() -> list:
    """The 15 baseline policy classes."""
    grid = [ClassSpec("linear")]
    grid += [ClassSpec("axis_tree", n) for n in TREE_NODE_GRID]
    grid += [ClassSpec("oblique_tree", n) for n in TREE_NODE_GRID]
    grid += [ClassSpec("relu_mlp", h) for h in MLP_HIDDEN_GRID]
    return grid


def cell_seed(master_seed: int, env: str, variant: str, label: str, rep: int) -> int:
    return stream_key("sweep", master_seed, env, variant, label, rep) % 2 ** 31


class _CellTimeout(Exception):
    pass


@contextmanager
def _time_limit(seconds):
    """Raise _CellTimeout in the main thread after the given wall time."""
    if not seconds or not hasattr(signal, "SIGALRM"):
        yield
        return

    def handler(signum, frame):
        raise _CellTimeout(f"timeout: cell exceeded {seconds:g}s")

    old = signal.signal(signal.SIGALRM, handler)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, old)


def run_key(env: str, variant: str, label: str, samples: int, rep: int) -> tuple:
    """Identity of one sweep cell, used for resume bookkeeping."""
    return (env, variant, label, int(samples), int(rep))


def sweep(env_names, variants, grid, repetitions: int, experts_by_env,
          total_samples: int = DESK_SAMPLES, eval_episodes: int = 100,
          master_seed: int = 0, on_record=None, skip_keys=None,
          cell_timeout_s: float | None = None, baselines=None) -> list:
    """One imitation run per (env, variant, class spec, repetition).

    Q-DAgger cells without a Q expert (continuous-action envs) are recorded
    as error rows rather than trained.  Failures and per-cell timeouts are
    recorded on the RunRecord and the sweep continues.  Cells whose run_key
    is in skip_keys are not rerun.
    baselines maps env name -> (random_return, expert_return) to avoid
    recomputing them when the caller already has them.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    skip_keys = skip_keys or set()
    records = []
    baseline_cache = dict(baselines) if baselines else {}
    for env_name in env_names:
        expert = experts_by_env[env_name]
        for variant in variants:
            no_q = variant == "qdagger" and not isinstance(expert, QExpert)
            for spec in grid:
                for rep in range(repetitions):
                    key = run_key(env_name, variant, spec.label(),
                                  total_samples, rep)
                    if key in skip_keys:
                        continue
                    if no_q:
                        record = RunRecord(
                            env=env_name, variant=variant,
                            class_label=spec.label(), samples=total_samples,
                            seed=cell_seed(master_seed, env_name, variant,
                                           spec.label(), rep),
                            rep=rep,
                            error="importance sampling weights need a Q expert")
                        if on_record is not None:
                            on_record(record, None)
                        records.append(record)
                        continue
                    seed = cell_seed(master_seed, env_name, variant,
                                     spec.label(), rep)
                    config = variant_config(variant, spec,
                                            total_samples=total_samples,
                                            seed=seed,
                                            eval_episodes=eval_episodes)
                    env = make_env(env_name)
                    try:
                        with _time_limit(cell_timeout_s):
                            if env_name not in baseline_cache:
                                baseline_cache[env_name] = env_baselines(
                                    env_name, expert, eval_episodes,
                                    seed=master_seed)
                            student, record = imitate(
                                expert, env, config,
                                baselines=baseline_cache[env_name])
                        record.rep = rep
                    except Exception as exc:  # record and continue
                        record = RunRecord(env=env_name, variant=variant,
                                           class_label=spec.label(),
                                           samples=total_samples, seed=seed,
                                           rep=rep, error=str(exc))
                        student = None
                    if on_record is not None:
                        on_record(record, student)
                    records.append(record)
    return records
