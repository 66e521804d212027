"""Experiment runner: plain-text configs, append-only CSV stores, figure CSVs.

The pipeline is sweep -> best-per-class selection by mean episodic reward ->
unfold -> fresh-seed measurement -> optional verification.  Every stage
appends rows to CSV files under one output directory and skips work whose
key is already present, so an interrupted run can simply be restarted.
Reporting only reads those CSVs; rerunning a report rewrites the same bytes.

Config files are flat `key = value` lines; lists are comma separated and
`#` starts a comment.  docs/schemas.md documents every CSV column.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import ENV_NAMES, Discrete, env_spec, make_env, rollout
from .errors import ConfigError, StatError, ValidationError
from .experts import (
    TRAIN_TARGETS,
    load_expert,
    load_pretrained,
    save_expert,
    train_continuous_expert,
    train_q_expert,
)
from .fitters import class_spec_from_label
from .imitation import (
    DESK_SAMPLES,
    PAPER_SAMPLE_BUDGETS,
    VARIANTS,
    RunRecord,
    default_grid,
    env_baselines,
    imitate,
    run_key,
    sweep,
    variant_config,
)
from .metrics import (
    ENV_ATTRIBUTES,
    InterpretabilityRecord,
    env_attributes,
    feature_importance,
    iqm,
    measure_policy,
    performance_profile,
    stratified_bootstrap_ci,
)
from .policies import load as load_policy, save as save_policy
from .rng import stream_key
from .unfold import unfold
from .verify import gen_queries, verify_policy

SCHEMA_VERSION = 1
FIGURES = ("tradeoff", "imitation", "profiles", "verification", "importance")
EMPTY_FIGURE_MARKER = "# empty-figure: no matching rows"

_MLP_LABELS = ("relu_mlp-2x2", "relu_mlp-4x4", "relu_mlp-8x8", "relu_mlp-16x16")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one end-to-end run needs, resolvable up front."""

    envs: tuple = tuple(ENV_NAMES)
    variants: tuple = VARIANTS
    classes: tuple = tuple(s.label() for s in default_grid())
    repetitions: int = 2
    total_samples: int = DESK_SAMPLES
    eval_episodes: int = 100
    measure_episodes: int = 100
    master_seed: int = 0
    out_dir: str = "results"
    paper_scale: bool = False
    cell_timeout_s: float = 14_400.0
    verify: bool = False
    verify_envs: tuple = ("MountainCar",)
    verify_classes: tuple = _MLP_LABELS
    verify_queries: int = 500
    verify_timeout_s: float = 60.0

    def __post_init__(self):
        for name in self.envs:
            if name not in ENV_NAMES:
                raise ConfigError(f"unknown env {name!r}; choose from {ENV_NAMES}")
        if not self.envs:
            raise ConfigError("need at least one env")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
        if not self.variants:
            raise ConfigError("need at least one variant")
        if not self.classes:
            raise ConfigError("need at least one policy class")
        for label in self.classes:
            class_spec_from_label(label)
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.eval_episodes < 1 or self.measure_episodes < 1:
            raise ConfigError("episode counts must be >= 1")
        if self.verify_queries < 1:
            raise ConfigError("verify_queries must be >= 1")
        if self.cell_timeout_s <= 0 or self.verify_timeout_s <= 0:
            raise ConfigError("timeouts must be positive")
        if self.verify:
            for name in self.verify_envs:
                if name not in self.envs:
                    raise ConfigError(f"verify env {name!r} not in envs")
            for label in self.verify_classes:
                if label not in self.classes:
                    raise ConfigError(f"verify class {label!r} not in classes")

    def grid(self):
        return [class_spec_from_label(label) for label in self.classes]


_LIST_KEYS = {"envs", "variants", "classes", "verify_envs", "verify_classes"}
_INT_KEYS = {"repetitions", "total_samples", "eval_episodes", "measure_episodes",
             "master_seed", "verify_queries"}
_FLOAT_KEYS = {"cell_timeout_s", "verify_timeout_s"}
_BOOL_KEYS = {"paper_scale", "verify"}
_STR_KEYS = {"out_dir"}
_ALL_KEYS = _LIST_KEYS | _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | _STR_KEYS


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key in _LIST_KEYS:
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key} expects true/false, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {raw!r}") from None
    return raw


def parse_config(text: str, overrides=None) -> ExperimentConfig:
    """Parse `key = value` lines; later `--set key=value` overrides win."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    if values.get("paper_scale") and "total_samples" not in values:
        values["total_samples"] = PAPER_SAMPLE_BUDGETS[-1]
    return ExperimentConfig(**values)


def load_config(path, overrides=None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)


# ---------------------------------------------------------------------------
# result store

RUNS_FIELDS = ("schema_version", "env", "variant", "class_label", "samples",
               "seed", "rep", "mean_return", "normalized_return", "returns",
               "policy_path", "error")
INTERP_FIELDS = ("schema_version", "env", "class_label", "variant", "rep",
                 "samples", "param_count", "size_bytes", "step_time_s",
                 "step_ci_lo", "step_ci_hi", "episode_time_s",
                 "folded_step_time_s", "folded_ci_lo", "folded_ci_hi",
                 "mean_return", "normalized_return", "policy_path")
VERIF_FIELDS = ("schema_version", "env", "class_label", "query_index",
                "status", "wall_time_s", "nodes_explored", "state_lo",
                "state_hi", "target")
ENVS_FIELDS = ("schema_version", "env") + ENV_ATTRIBUTES

_TABLES = {
    "runs.csv": RUNS_FIELDS,
    "interpretability.csv": INTERP_FIELDS,
    "verification.csv": VERIF_FIELDS,
    "envs.csv": ENVS_FIELDS,
}


def _join_floats(values) -> str:
    return ";".join(repr(float(v)) for v in values)


def _split_floats(text: str) -> list:
    return [float(p) for p in text.split(";")] if text else []


class ResultStore:
    """Append-only CSV files under one directory; rows are never rewritten."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "policies").mkdir(exist_ok=True)
        (self.root / "figures").mkdir(exist_ok=True)
        for name, header in _TABLES.items():
            path = self.root / name
            if not path.exists():
                with path.open("w", newline="", encoding="utf-8") as fh:
                    csv.writer(fh).writerow(header)

    def _append(self, name: str, row: dict) -> None:
        row = dict(row, schema_version=SCHEMA_VERSION)
        with (self.root / name).open("a", newline="", encoding="utf-8") as fh:
            csv.DictWriter(fh, fieldnames=_TABLES[name]).writerow(row)

    def read(self, name: str) -> list:
        with (self.root / name).open("r", newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    # -- runs --
    def append_run(self, record: RunRecord, policy_path: str = "") -> None:
        self._append("runs.csv", {
            "env": record.env, "variant": record.variant,
            "class_label": record.class_label, "samples": record.samples,
            "seed": record.seed, "rep": record.rep,
            "mean_return": repr(float(record.mean_return)),
            "normalized_return": repr(float(record.normalized)),
            "returns": _join_floats(record.returns),
            "policy_path": policy_path, "error": record.error,
        })

    def run_keys(self) -> set:
        return {
            run_key(r["env"], r["variant"], r["class_label"],
                    int(r["samples"]), int(r["rep"]))
            for r in self.read("runs.csv")
        }

    # -- interpretability --
    def append_interpretability(self, rec: InterpretabilityRecord, variant: str,
                                rep: int, samples: int, mean_return: float,
                                normalized: float, policy_path: str) -> None:
        self._append("interpretability.csv", {
            "env": rec.env, "class_label": rec.class_label,
            "variant": variant, "rep": rep, "samples": samples,
            "param_count": rec.param_count, "size_bytes": rec.size_bytes,
            "step_time_s": repr(rec.step_time_s),
            "step_ci_lo": repr(rec.step_time_ci[0]),
            "step_ci_hi": repr(rec.step_time_ci[1]),
            "episode_time_s": repr(rec.episode_time_s),
            "folded_step_time_s": repr(rec.folded_step_time_s),
            "folded_ci_lo": repr(rec.folded_step_time_ci[0]),
            "folded_ci_hi": repr(rec.folded_step_time_ci[1]),
            "mean_return": repr(float(mean_return)),
            "normalized_return": repr(float(normalized)),
            "policy_path": policy_path,
        })

    def interpretability_keys(self) -> set:
        return {(r["env"], r["class_label"]) for r in self.read("interpretability.csv")}

    # -- verification --
    def append_verification(self, env: str, class_label: str, index: int,
                            query, verdict) -> None:
        if query.discrete:
            target = ";".join(str(a) for a in query.action_set)
        else:
            target = _join_floats(query.action_lo) + "|" + _join_floats(query.action_hi)
        self._append("verification.csv", {
            "env": env, "class_label": class_label, "query_index": index,
            "status": verdict.status,
            "wall_time_s": repr(verdict.wall_time_s),
            "nodes_explored": verdict.nodes_explored,
            "state_lo": _join_floats(query.state_lo),
            "state_hi": _join_floats(query.state_hi),
            "target": target,
        })

    def verification_keys(self) -> set:
        return {(r["env"], r["class_label"]) for r in self.read("verification.csv")}

    # -- env attributes --
    def append_env(self, env: str, attributes: dict) -> None:
        row = {"env": env}
        row.update({k: repr(float(attributes[k])) for k in ENV_ATTRIBUTES})
        self._append("envs.csv", row)

    def env_rows(self) -> dict:
        return {r["env"]: r for r in self.read("envs.csv")}

    def check_integrity(self) -> None:
        """Every measurement row must point back at a recorded run."""
        runs = {(r["env"], r["variant"], r["class_label"], r["samples"], r["rep"])
                for r in self.read("runs.csv")}
        for row in self.read("interpretability.csv"):
            key = (row["env"], row["variant"], row["class_label"],
                   row["samples"], row["rep"])
            if key not in runs:
                raise ValidationError(f"measurement row without run row: {key}")


# ---------------------------------------------------------------------------
# pipeline


def _best_rows(rows, config: ExperimentConfig) -> dict:
    """Max-mean-reward run per (env, class_label) among this config's cells."""
    best: dict = {}
    classes = set(config.classes)
    variants = set(config.variants)
    for row in rows:
        if row["error"]:
            continue
        if row["env"] not in config.envs or row["class_label"] not in classes:
            continue
        if row["variant"] not in variants or int(row["samples"]) != config.total_samples:
            continue
        if int(row["rep"]) >= config.repetitions or not row["policy_path"]:
            continue
        mean = float(row["mean_return"])
        if not np.isfinite(mean):
            continue
        key = (row["env"], row["class_label"])
        if key not in best or mean > float(best[key]["mean_return"]):
            best[key] = row
    return best


def run(config: ExperimentConfig, log=print) -> ResultStore:
    """Execute the full pipeline described by the config, resumably."""
    store = ResultStore(config.out_dir)
    experts = {}
    for name in config.envs:
        try:
            experts[name] = load_pretrained(name)
        except FileNotFoundError as exc:
            raise ConfigError(f"no pretrained expert for {name}: {exc}") from None

    # env attribute rows double as the baseline cache for normalization
    env_rows = store.env_rows()
    baselines = {}
    for name in config.envs:
        if name in env_rows:
            row = env_rows[name]
            baselines[name] = (float(row["random_return"]), float(row["expert_return"]))
            continue
        random_mean, expert_mean = env_baselines(
            name, experts[name], config.eval_episodes, seed=config.master_seed)
        env = make_env(name)
        expert_stats = rollout(
            env, experts[name].act, config.eval_episodes,
            seed=stream_key("baseline-expert", name, config.master_seed) % 2 ** 31)
        attrs = env_attributes(env.spec, expert_mean, random_mean,
                               float(np.mean(expert_stats.lengths)))
        store.append_env(name, dict(zip(ENV_ATTRIBUTES, attrs)))
        baselines[name] = (random_mean, expert_mean)
        log(f"[baselines] {name}: random {random_mean:.1f}, expert {expert_mean:.1f}")

    def on_record(record: RunRecord, student) -> None:
        policy_path = ""
        if student is not None:
            rel = (f"policies/{record.env}-{record.variant}-{record.class_label}"
                   f"-{record.samples}-rep{record.rep}.txt")
            save_policy(student, store.root / rel)
            policy_path = rel
        store.append_run(record, policy_path)
        outcome = record.error or f"mean {record.mean_return:.1f}"
        log(f"[run] {record.env} {record.variant} {record.class_label} "
            f"rep{record.rep}: {outcome}")

    sweep(config.envs, config.variants, config.grid(), config.repetitions,
          experts, total_samples=config.total_samples,
          eval_episodes=config.eval_episodes, master_seed=config.master_seed,
          on_record=on_record, skip_keys=store.run_keys(),
          cell_timeout_s=config.cell_timeout_s, baselines=baselines)

    best = _best_rows(store.read("runs.csv"), config)

    # fresh-seed measurement of each selected policy; measurement seeds come
    # from a stream disjoint from the sweep's
    measured = store.interpretability_keys()
    for (env_name, label), row in sorted(best.items()):
        if (env_name, label) in measured:
            continue
        policy = load_policy(store.root / row["policy_path"])
        spec = env_spec(env_name)
        program = unfold(policy, state_dim=spec.state_dim)
        seed = stream_key("measure", config.master_seed, env_name, label) % 2 ** 31
        rec = measure_policy(policy, program, make_env(env_name),
                             episodes=config.measure_episodes, seed=seed,
                             class_label=label)
        store.append_interpretability(
            rec, variant=row["variant"], rep=int(row["rep"]),
            samples=int(row["samples"]), mean_return=float(row["mean_return"]),
            normalized=float(row["normalized_return"]),
            policy_path=row["policy_path"])
        log(f"[measure] {env_name} {label}: step {rec.step_time_s * 1e6:.2f}us, "
            f"{rec.size_bytes} bytes")

    if config.verify:
        done = store.verification_keys()
        for env_name in config.verify_envs:
            spec = env_spec(env_name)
            queries = gen_queries(spec, config.verify_queries,
                                  seed=config.master_seed)
            for label in config.verify_classes:
                if (env_name, label) in done:
                    continue
                row = best.get((env_name, label))
                if row is None:
                    continue
                policy = load_policy(store.root / row["policy_path"])
                unsat_times = []
                for i, query in enumerate(queries):
                    verdict = verify_policy(policy, query,
                                            timeout_s=config.verify_timeout_s)
                    store.append_verification(env_name, label, i, query, verdict)
                    if verdict.status == "UNSAT":
                        unsat_times.append(verdict.wall_time_s)
                med = float(np.median(unsat_times)) if unsat_times else float("nan")
                log(f"[verify] {env_name} {label}: {len(unsat_times)} UNSAT, "
                    f"median {med * 1e3:.3f}ms")

    store.check_integrity()
    return store


# ---------------------------------------------------------------------------
# reporting


def _write_figure(store: ResultStore, name: str, header, rows, out_path=None) -> Path:
    path = Path(out_path) if out_path else store.root / "figures" / f"{name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
        if not rows:
            fh.write(EMPTY_FIGURE_MARKER + "\n")
    return path


def _good_runs(store: ResultStore) -> list:
    rows = []
    for r in store.read("runs.csv"):
        if r["error"]:
            continue
        norm = float(r["normalized_return"])
        if np.isfinite(norm):
            rows.append(r)
    return rows


def _report_tradeoff(store: ResultStore, out_path=None) -> Path:
    header = ("env", "class_label", "variant", "rep", "mean_return",
              "return_ci_lo", "return_ci_hi", "normalized_return",
              "step_time_s", "step_ci_lo", "step_ci_hi", "episode_time_s",
              "folded_step_time_s", "folded_ci_lo", "folded_ci_hi",
              "size_bytes", "param_count")
    runs_by_key = {
        (r["env"], r["variant"], r["class_label"], r["samples"], r["rep"]): r
        for r in store.read("runs.csv")
    }
    rows = []
    for m in sorted(store.read("interpretability.csv"),
                    key=lambda r: (r["env"], r["class_label"])):
        run_row = runs_by_key.get(
            (m["env"], m["variant"], m["class_label"], m["samples"], m["rep"]))
        returns = _split_floats(run_row["returns"]) if run_row else []
        if len(returns) >= 4:
            ci = stratified_bootstrap_ci(returns, statistic=np.mean)
        else:
            ci = (float("nan"), float("nan"))
        rows.append((
            m["env"], m["class_label"], m["variant"], m["rep"],
            m["mean_return"], repr(ci[0]), repr(ci[1]), m["normalized_return"],
            m["step_time_s"], m["step_ci_lo"], m["step_ci_hi"],
            m["episode_time_s"], m["folded_step_time_s"], m["folded_ci_lo"],
            m["folded_ci_hi"], m["size_bytes"], m["param_count"]))
    return _write_figure(store, "tradeoff", header, rows, out_path)


def _norm_by_group(rows):
    """(env, variant) -> {class_label: [normalized scores]}."""
    grouped: dict = {}
    for r in rows:
        grouped.setdefault((r["env"], r["variant"]), {}).setdefault(
            r["class_label"], []).append(float(r["normalized_return"]))
    return grouped


def _iqm_row(strata: dict) -> tuple:
    """(n, iqm, ci_lo, ci_hi) over pooled scores; nan when too few scores."""
    scores = [s for group in strata.values() for s in group]
    try:
        center = float(iqm(scores))
        ci = stratified_bootstrap_ci(strata)
    except StatError:
        center, ci = float("nan"), (float("nan"), float("nan"))
    return len(scores), center, ci[0], ci[1]


def _report_imitation(store: ResultStore, out_path=None) -> Path:
    header = ("env", "variant", "n_runs", "iqm_normalized", "ci_lo", "ci_hi")
    rows = []
    grouped = _norm_by_group(_good_runs(store))
    variants = sorted({v for (_, v) in grouped})
    for (env_name, variant) in sorted(grouped):
        n, center, lo, hi = _iqm_row(grouped[(env_name, variant)])
        rows.append((env_name, variant, n, repr(center), repr(lo), repr(hi)))
    for variant in variants:
        strata = {env_name: [s for group in grouped[(env_name, v)].values()
                             for s in group]
                  for (env_name, v) in grouped if v == variant}
        if not any(strata.values()):
            continue
        n, center, lo, hi = _iqm_row(strata)
        rows.append(("__all__", variant, n, repr(center), repr(lo), repr(hi)))
    return _write_figure(store, "imitation", header, rows, out_path)


def _report_profiles(store: ResultStore, out_path=None) -> Path:
    header = ("env", "variant", "tau", "fraction")
    taus = np.linspace(0.0, 1.2, 121)
    rows = []
    good = _good_runs(store)
    grouped: dict = {}
    for r in good:
        grouped.setdefault((r["env"], r["variant"]), []).append(
            float(r["normalized_return"]))
        grouped.setdefault(("__all__", r["variant"]), []).append(
            float(r["normalized_return"]))
    for (env_name, variant) in sorted(grouped):
        fractions = performance_profile(grouped[(env_name, variant)], taus)
        for tau, frac in zip(taus, fractions):
            rows.append((env_name, variant, repr(float(tau)), repr(float(frac))))
    return _write_figure(store, "profiles", header, rows, out_path)


def _report_verification(store: ResultStore, out_path=None) -> Path:
    header = ("env", "class_label", "n_queries", "n_sat", "n_unsat",
              "n_unknown", "median_unsat_time_s", "mean_nodes_explored")
    grouped: dict = {}
    for r in store.read("verification.csv"):
        grouped.setdefault((r["env"], r["class_label"]), []).append(r)
    rows = []
    for key in sorted(grouped):
        entries = grouped[key]
        unsat = [float(r["wall_time_s"]) for r in entries if r["status"] == "UNSAT"]
        med = float(np.median(unsat)) if unsat else float("nan")
        nodes = float(np.mean([float(r["nodes_explored"]) for r in entries]))
        rows.append((key[0], key[1], len(entries),
                     sum(r["status"] == "SAT" for r in entries), len(unsat),
                     sum(r["status"] == "UNKNOWN" for r in entries),
                     repr(med), repr(nodes)))
    return _write_figure(store, "verification", header, rows, out_path)


def _report_importance(store: ResultStore, out_path=None) -> Path:
    header = ("attribute", "importance")
    env_rows = store.env_rows()
    xs, ys = [], []
    for r in _good_runs(store):
        attrs = env_rows.get(r["env"])
        if attrs is None:
            continue
        xs.append([float(attrs[k]) for k in ENV_ATTRIBUTES])
        ys.append(float(r["normalized_return"]))
    if not xs:
        return _write_figure(store, "importance", header, [], out_path)
    ranked = feature_importance(np.asarray(xs), np.asarray(ys))
    rows = [(name, repr(float(score))) for name, score in ranked]
    return _write_figure(store, "importance", header, rows, out_path)


_REPORTS = {
    "tradeoff": _report_tradeoff,
    "imitation": _report_imitation,
    "profiles": _report_profiles,
    "verification": _report_verification,
    "importance": _report_importance,
}


def report(store: ResultStore, figure_id: str, out_path=None) -> Path:
    """Write one figure-data CSV from the store; pure and repeatable."""
    if figure_id not in _REPORTS:
        raise ConfigError(f"unknown figure {figure_id!r}; choose from {FIGURES}")
    return _REPORTS[figure_id](store, out_path)


# ---------------------------------------------------------------------------
# command line


def _cmd_train_expert(args) -> int:
    env = make_env(args.env)
    target = args.target if args.target is not None else TRAIN_TARGETS[args.env]
    if isinstance(env.spec.action_kind, Discrete):
        budget = args.budget if args.budget is not None else 400_000
        expert = train_q_expert(env, budget=budget, seed=args.seed,
                                n_step=args.n_step, target_return=target)
    else:
        budget = args.budget if args.budget is not None else 6_000_000
        expert = train_continuous_expert(env, budget=budget, seed=args.seed,
                                         population=args.population,
                                         eval_rollouts=args.eval_rollouts,
                                         target_return=target)
    out = Path(args.out) if args.out else Path(f"{args.env}.txt")
    save_expert(expert, out)
    print(f"trained {args.env} expert: eval return {expert.eval_return:.1f} -> {out}")
    return 0


def _cmd_imitate(args) -> int:
    env = make_env(args.env)
    expert = load_expert(args.expert) if args.expert else load_pretrained(args.env)
    spec = class_spec_from_label(args.class_label)
    config = variant_config(args.variant, spec, total_samples=args.samples,
                            seed=args.seed, eval_episodes=args.eval_episodes)
    student, record = imitate(expert, env, config)
    if args.out:
        save_policy(student, Path(args.out))
    print(f"{args.env} {args.variant} {args.class_label}: "
          f"mean return {record.mean_return:.2f}, "
          f"normalized {record.normalized:.3f}"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def _cmd_measure(args) -> int:
    policy = load_policy(args.policy)
    env = make_env(args.env)
    program = unfold(policy, state_dim=env.spec.state_dim)
    if args.emit:
        Path(args.emit).write_text(program.text, encoding="utf-8")
        print(f"emitted {program.size_bytes} bytes -> {args.emit}")
    rec = measure_policy(policy, program, env, episodes=args.episodes,
                         seed=args.seed, class_label=args.class_label or "")
    print(f"env = {rec.env}")
    print(f"param_count = {rec.param_count}")
    print(f"size_bytes = {rec.size_bytes}")
    print(f"step_time_s = {rec.step_time_s!r}")
    print(f"step_time_ci = {rec.step_time_ci[0]!r} {rec.step_time_ci[1]!r}")
    print(f"episode_time_s = {rec.episode_time_s!r}")
    print(f"folded_step_time_s = {rec.folded_step_time_s!r}")
    print(f"folded_step_time_ci = {rec.folded_step_time_ci[0]!r} "
          f"{rec.folded_step_time_ci[1]!r}")
    return 0


def _cmd_verify(args) -> int:
    policy = load_policy(args.policy)
    spec = env_spec(args.env)
    queries = gen_queries(spec, n=args.queries, seed=args.seed)
    counts = {"SAT": 0, "UNSAT": 0, "UNKNOWN": 0}
    unsat_times = []
    rows = []
    for i, query in enumerate(queries):
        verdict = verify_policy(policy, query, eps=args.eps,
                                timeout_s=args.timeout)
        counts[verdict.status] += 1
        if verdict.status == "UNSAT":
            unsat_times.append(verdict.wall_time_s)
        rows.append((i, verdict.status, repr(verdict.wall_time_s),
                     verdict.nodes_explored))
    if args.csv:
        with Path(args.csv).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("query_index", "status", "wall_time_s",
                             "nodes_explored"))
            writer.writerows(rows)
    med = float(np.median(unsat_times)) if unsat_times else float("nan")
    print(f"{args.env}: {counts['SAT']} SAT, {counts['UNSAT']} UNSAT, "
          f"{counts['UNKNOWN']} UNKNOWN; median UNSAT time {med!r}s")
    return 0


def _cmd_report(args) -> int:
    store = ResultStore(args.store)
    names = FIGURES if args.figure == "all" else (args.figure,)
    if args.out and len(names) > 1:
        raise ConfigError("--out needs a single figure")
    for name in names:
        path = report(store, name, out_path=args.out)
        print(f"wrote {path}")
    return 0


def _cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.out:
        overrides.append(f"out_dir={args.out}")
    if args.config:
        config = load_config(args.config, overrides=overrides)
    else:
        config = parse_config("", overrides=overrides)
    store = run(config)
    print(f"run complete: results in {store.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unfoldrl",
        description="Distill RL experts into small policies, unfold them into "
                    "straight-line programs, and measure simulatability.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-expert", help="train and save an expert")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-step", type=int, default=1)
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--eval-rollouts", type=int, default=3)
    p.add_argument("--target", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_train_expert)

    p = sub.add_parser("imitate", help="fit one student policy")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--class-label", required=True)
    p.add_argument("--samples", type=int, default=DESK_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-episodes", type=int, default=100)
    p.add_argument("--expert", default=None, help="expert file (default: shipped)")
    p.add_argument("--out", default=None, help="where to save the student")
    p.set_defaults(func=_cmd_imitate)

    p = sub.add_parser("measure", help="time a saved policy, folded and unfolded")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-label", default=None)
    p.add_argument("--emit", default=None,
                   help="also write the unfolded program text here")
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("verify", help="run box queries against a saved policy")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--policy", required=True)
    p.add_argument("--queries", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--csv", default=None, help="write per-query verdicts here")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="export figure-data CSVs from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--figure", default="all", choices=FIGURES + ("all",))
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="override out_dir")
    p.add_argument("--set", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError, RuntimeError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
