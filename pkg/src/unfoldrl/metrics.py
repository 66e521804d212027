"""Simulatability proxies and benchmark statistics.

Step inference time is wall clock around the policy call only, never the
simulator; size is the byte length of the unfolded text.  Aggregation uses
interquartile means with stratified bootstrap confidence intervals, plus
performance profiles and a random-forest attribution of interpretability to
environment attributes.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .envs import Discrete, Env
from .errors import DegenerateNormalization, StatError
from .fitters import _best_split
from .rng import named_rng
from .unfold import Program, interpret

WARMUP_EPISODES = 2
BOOTSTRAP_REPS = 2000
CI_LEVEL = 0.95

ENV_ATTRIBUTES = (
    "state_dim",
    "action_dim",
    "expert_return",
    "random_return",
    "solve_threshold",
    "expert_solve_gap",
    "expert_episode_length",
)


# ---------------------------------------------------------------------------
# timing harness
# ---------------------------------------------------------------------------


@dataclass
class TimingResult:
    """Per-step policy latencies over measured episodes."""

    steps_by_episode: list = field(repr=False, default_factory=list)
    mean: float = float("nan")
    ci: tuple = (float("nan"), float("nan"))

    @property
    def step_times(self) -> np.ndarray:
        if not self.steps_by_episode:
            return np.array([])
        return np.concatenate(self.steps_by_episode)

    @property
    def episode_sums(self) -> np.ndarray:
        return np.array([float(t.sum()) for t in self.steps_by_episode])


def _episode_bootstrap_ci(per_ep, reps: int, level: float, seed_parts) -> tuple:
    sums = np.array([t.sum() for t in per_ep])
    lens = np.array([len(t) for t in per_ep], dtype=np.float64)
    n = len(per_ep)
    rng = named_rng("timing-ci", *seed_parts)
    idx = rng.integers(n, size=(reps, n))
    means = sums[idx].sum(axis=1) / lens[idx].sum(axis=1)
    alpha = 100.0 * (1.0 - level) / 2.0
    return (float(np.percentile(means, alpha)), float(np.percentile(means, 100 - alpha)))


def _time_actor(actor, env: Env, episodes: int, seed: int, label: str) -> TimingResult:
    if episodes < 1:
        raise StatError("episodes must be >= 1")
    clock = time.perf_counter
    per_ep = []
    for ep in range(WARMUP_EPISODES + episodes):
        s = env.reset(seed=seed * 1_000_003 + ep)
        times = []
        while True:
            t0 = clock()
            a = actor(s)
            dt = clock() - t0
            times.append(dt)
            res = env.step(a)
            s = res.state
            if res.terminated or res.truncated:
                break
        if ep >= WARMUP_EPISODES:
            per_ep.append(np.array(times))
    total = float(sum(t.sum() for t in per_ep))
    steps = sum(len(t) for t in per_ep)
    return TimingResult(
        steps_by_episode=per_ep,
        mean=total / steps,
        ci=_episode_bootstrap_ci(per_ep, BOOTSTRAP_REPS, CI_LEVEL, (label, seed)),
    )


def time_inference(program: Program, env: Env, episodes: int = 100,
                   seed: int = 0) -> TimingResult:
    """Wall-clock seconds per interpret call; warmup episodes excluded,
    env.step excluded."""
    return _time_actor(lambda s: interpret(program, s), env, episodes, seed,
                       "unfolded")


def time_folded(policy, env: Env, episodes: int = 100, seed: int = 0) -> TimingResult:
    """Same harness, timing the native structured predict path."""
    return _time_actor(policy.predict, env, episodes, seed, "folded")


@dataclass
class InterpretabilityRecord:
    """Simulatability proxies for one policy on one env."""

    env: str
    class_label: str
    step_time_s: float
    episode_time_s: float
    size_bytes: int
    folded_step_time_s: float
    param_count: int
    step_time_ci: tuple = (float("nan"), float("nan"))
    folded_step_time_ci: tuple = (float("nan"), float("nan"))
    policy_ref: str = ""


def measure_policy(policy, program: Program, env: Env, episodes: int = 100,
                   seed: int = 0, class_label: str = "") -> InterpretabilityRecord:
    """Time both inference paths and collect the size proxies."""
    unfolded = time_inference(program, env, episodes, seed)
    folded = time_folded(policy, env, episodes, seed)
    return InterpretabilityRecord(
        env=env.spec.name,
        class_label=class_label,
        step_time_s=unfolded.mean,
        episode_time_s=float(np.mean(unfolded.episode_sums)),
        size_bytes=program.size_bytes,
        folded_step_time_s=folded.mean,
        param_count=policy.param_count(),
        step_time_ci=unfolded.ci,
        folded_step_time_ci=folded.ci,
    )


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def normalized_return(r: float, r_random: float, r_expert: float) -> float:
    """Linear rescale: random -> 0, expert -> 1."""
    if r_expert == r_random:
        raise DegenerateNormalization(
            f"expert and random returns both {r_expert}; cannot normalize"
        )
    return (r - r_random) / (r_expert - r_random)


def iqm(scores) -> float:
    """Interquartile mean with fractional trimming.

    Sorted values occupy unit intervals on [0, n]; each value is weighted by
    its interval's overlap with [n/4, 3n/4], so iqm([1..8]) = 4.5.
    """
    x = np.sort(np.asarray(scores, dtype=np.float64))
    n = len(x)
    if n < 4:
        raise StatError(f"iqm needs at least 4 scores, got {n}")
    lo, hi = n / 4.0, 3.0 * n / 4.0
    starts = np.arange(n, dtype=np.float64)
    weights = np.clip(np.minimum(starts + 1.0, hi) - np.maximum(starts, lo), 0.0, 1.0)
    return float(np.sum(weights * x) / np.sum(weights))


def stratified_bootstrap_ci(grouped, reps: int = BOOTSTRAP_REPS,
                            level: float = CI_LEVEL, statistic=iqm,
                            seed: int = 0) -> tuple:
    """(lo, hi) percentile CI of statistic over pooled scores, resampling
    within each stratum independently.

    grouped: mapping stratum -> score list, or a plain list for one stratum.
    """
    if not isinstance(grouped, dict):
        grouped = {"all": list(grouped)}
    strata = [np.asarray(v, dtype=np.float64) for v in grouped.values() if len(v)]
    if not strata:
        raise StatError("no scores to bootstrap")
    rng = named_rng("stratified-bootstrap", seed, *sorted(map(str, grouped.keys())))
    stats = np.empty(reps)
    for r in range(reps):
        pooled = [s[rng.integers(len(s), size=len(s))] for s in strata]
        stats[r] = statistic(np.concatenate(pooled))
    alpha = 100.0 * (1.0 - level) / 2.0
    return (float(np.percentile(stats, alpha)), float(np.percentile(stats, 100 - alpha)))


def performance_profile(scores, taus) -> np.ndarray:
    """Fraction of runs scoring strictly above each tau; nonincreasing."""
    x = np.asarray(scores, dtype=np.float64)
    t = np.asarray(taus, dtype=np.float64)
    if len(x) == 0:
        raise StatError("no scores for performance profile")
    return (x[None, :] > t[:, None]).mean(axis=1)


# ---------------------------------------------------------------------------
# random-forest feature importance
# ---------------------------------------------------------------------------


def _forest_tree(x, y, w, rng, max_features: int, importances: np.ndarray) -> None:
    """Grow one regression tree on a bootstrap sample, accumulating each
    split's weighted impurity decrease into importances."""
    total = w.sum()

    def rec(idx):
        if len(idx) < 2:
            return
        cols = np.sort(rng.choice(x.shape[1], size=max_features, replace=False))
        found = _best_split(x[idx][:, cols], y[idx], w[idx], "regress", y.shape[1])
        if found is None:
            return
        col, t, gain = found
        feat = int(cols[col])
        importances[feat] += gain * (w[idx].sum() / total)
        mask = x[idx, feat] <= t
        rec(idx[mask])
        rec(idx[~mask])

    rec(np.arange(len(x)))


def feature_importance(x, y, names=ENV_ATTRIBUTES, n_trees: int = 200,
                       seed: int = 0) -> list:
    """Random-forest attribution: bagging plus per-split feature subsampling;
    importances are total impurity decreases normalized to sum to 100.

    Returns [(name, importance)] sorted by importance, descending.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n, d = x.shape
    if len(names) != d:
        raise StatError(f"{d} columns but {len(names)} names")
    if np.all(y == y[0]):
        warnings.warn("constant target; importances are uninformative")
        flat = [(nm, 100.0 / d) for nm in names]
        return sorted(flat, key=lambda kv: -kv[1])
    rng = named_rng("feature-importance", seed)
    # leave-one-out subsampling decorrelates trees without starving small
    # attribute tables of the truly predictive column
    max_features = max(1, d - 1)
    importances = np.zeros(d)
    w = np.ones(n)
    for _ in range(n_trees):
        rows = rng.integers(n, size=n)
        _forest_tree(x[rows], y[rows], w, rng, max_features, importances)
    total = importances.sum()
    if total <= 0:
        warnings.warn("no informative splits; importances are uninformative")
        flat = [(nm, 100.0 / d) for nm in names]
        return sorted(flat, key=lambda kv: -kv[1])
    scaled = 100.0 * importances / total
    return sorted(zip(list(names), map(float, scaled)), key=lambda kv: -kv[1])


def env_attributes(spec, expert_return: float, random_return: float,
                   expert_episode_length: float) -> np.ndarray:
    """The fixed attribute vector describing one environment."""
    kind = spec.action_kind
    action_dim = kind.n if isinstance(kind, Discrete) else kind.dim
    return np.array([
        float(spec.state_dim),
        float(action_dim),
        float(expert_return),
        float(random_return),
        float(spec.solve_threshold),
        float(expert_return - spec.solve_threshold),
        float(expert_episode_length),
    ])
