"""Train and save the expert checkpoints shipped in unfoldrl/experts_store.

Each env gets a strategy list of (trainer kwargs) attempts; the first
checkpoint whose 20-episode greedy evaluation clears the training target is
saved.  Rerunning skips envs whose checkpoint already exists unless --force.
"""

import argparse
import sys
import time
from pathlib import Path

from unfoldrl import experts
from unfoldrl.envs import make_env
from unfoldrl.errors import ExpertTrainingError

STORE = Path(__file__).resolve().parents[1] / "src" / "unfoldrl" / "experts_store"

ATTEMPTS = {
    "CartPole": [
        dict(budget=400_000, seed=0),
        dict(budget=400_000, seed=1),
    ],
    "Acrobot": [
        dict(budget=400_000, seed=0),
        dict(budget=400_000, seed=1),
        dict(budget=600_000, seed=2, n_step=3),
    ],
    "MountainCar": [
        dict(budget=400_000, seed=0, n_step=3),
        dict(budget=600_000, seed=1, n_step=3),
        dict(budget=600_000, seed=2, n_step=5),
        dict(budget=600_000, seed=3, n_step=3),
    ],
    "Pendulum": [
        dict(budget=6_000_000, seed=0, eval_rollouts=5),
        dict(budget=6_000_000, seed=1, eval_rollouts=5),
        dict(budget=8_000_000, seed=2, population=128, eval_rollouts=5),
    ],
    "MountainCarContinuous": [
        dict(budget=6_000_000, seed=0, population=128, eval_rollouts=2),
        dict(budget=8_000_000, seed=1, population=128, eval_rollouts=3),
        dict(budget=8_000_000, seed=2, population=256, eval_rollouts=2),
    ],
}

DISCRETE = {"CartPole", "Acrobot", "MountainCar"}


def train_env(name: str, force: bool) -> bool:
    out = STORE / f"{name}.txt"
    if out.exists() and not force:
        print(f"[{name}] checkpoint exists, skipping", flush=True)
        return True
    for attempt, kwargs in enumerate(ATTEMPTS[name]):
        t0 = time.perf_counter()
        print(f"[{name}] attempt {attempt}: {kwargs}", flush=True)
        env = make_env(name)
        try:
            if name in DISCRETE:
                expert = experts.train_q_expert(env, **kwargs)
            else:
                expert = experts.train_continuous_expert(env, **kwargs)
        except ExpertTrainingError as exc:
            print(f"[{name}] attempt {attempt} failed after "
                  f"{time.perf_counter() - t0:.0f}s: {exc}", flush=True)
            continue
        experts.save_expert(expert, out)
        print(f"[{name}] solved: eval_return={expert.eval_return:.1f} "
              f"({time.perf_counter() - t0:.0f}s) -> {out.name}", flush=True)
        return True
    print(f"[{name}] ALL ATTEMPTS FAILED", flush=True)
    return False


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--envs", nargs="*", default=list(ATTEMPTS))
    parser.add_argument("--force", action="store_true")
    args = parser.parse_args()
    STORE.mkdir(parents=True, exist_ok=True)
    ok = True
    for name in args.envs:
        ok = train_env(name, args.force) and ok
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
