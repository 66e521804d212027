"""End-to-end pipeline tests: config parsing, the result store, resumability,
best-policy selection, figure exports, and the command-line entry point."""

import csv
from pathlib import Path

import numpy as np
import pytest

from unfoldrl.cli import (
    EMPTY_FIGURE_MARKER,
    FIGURES,
    ExperimentConfig,
    ResultStore,
    load_config,
    main,
    parse_config,
    report,
    run,
)
from unfoldrl.errors import ConfigError, ValidationError
from unfoldrl.imitation import PAPER_SAMPLE_BUDGETS
from unfoldrl.policies import load as load_policy

CONFIG_TEXT = """\
# one env, two variants, two classes: small enough to run in-test
envs = CartPole
variants = bc, dagger
classes = linear, axis_tree-8
repetitions = 2
total_samples = 1200
eval_episodes = 12
measure_episodes = 8
master_seed = 0
verify = false
"""


@pytest.fixture(scope="session")
def tiny_store(tmp_path_factory):
    root = tmp_path_factory.mktemp("store")
    config_path = root / "experiment.cfg"
    config_path.write_text(CONFIG_TEXT + f"out_dir = {root / 'out'}\n",
                           encoding="utf-8")
    config = load_config(config_path)
    log_lines = []
    store = run(config, log=log_lines.append)
    return store, config, config_path, log_lines


def read_bytes(store, name):
    return (store.root / name).read_bytes()


# ---------------------------------------------------------------------------
# pipeline output shape


def test_run_writes_one_row_per_cell(tiny_store):
    store, config, _, _ = tiny_store
    rows = store.read("runs.csv")
    assert len(rows) == len(config.envs) * len(config.variants) * \
        len(config.classes) * config.repetitions
    assert all(row["error"] == "" for row in rows)
    assert all(row["schema_version"] == "1" for row in rows)


def test_run_rows_carry_eval_returns(tiny_store):
    store, config, _, _ = tiny_store
    for row in store.read("runs.csv"):
        returns = [float(p) for p in row["returns"].split(";")]
        assert len(returns) == config.eval_episodes
        assert np.isclose(float(row["mean_return"]), np.mean(returns))


def test_run_saves_loadable_policies(tiny_store):
    store, _, _, _ = tiny_store
    for row in store.read("runs.csv"):
        policy = load_policy(store.root / row["policy_path"])
        assert policy.predict([0.0, 0.0, 0.0, 0.0]) in (0, 1)


def test_measurement_rows_cover_best_policies(tiny_store):
    store, config, _, _ = tiny_store
    rows = store.read("interpretability.csv")
    assert {(r["env"], r["class_label"]) for r in rows} == {
        (env, label) for env in config.envs for label in config.classes
    }


def test_best_selection_matches_recompute(tiny_store):
    store, _, _, _ = tiny_store
    best = {}
    for row in store.read("runs.csv"):
        key = (row["env"], row["class_label"])
        if key not in best or float(row["mean_return"]) > float(best[key]["mean_return"]):
            best[key] = row
    for m in store.read("interpretability.csv"):
        chosen = best[(m["env"], m["class_label"])]
        assert m["variant"] == chosen["variant"]
        assert m["rep"] == chosen["rep"]
        assert m["policy_path"] == chosen["policy_path"]
        assert float(m["mean_return"]) == float(chosen["mean_return"])


def test_env_row_holds_baselines(tiny_store):
    store, _, _, _ = tiny_store
    rows = store.env_rows()
    assert set(rows) == {"CartPole"}
    row = rows["CartPole"]
    assert float(row["expert_return"]) > float(row["random_return"])


def test_run_logs_each_stage(tiny_store):
    _, _, _, log_lines = tiny_store
    stages = [line.split("]")[0].lstrip("[") for line in log_lines]
    assert stages.count("baselines") == 1
    assert stages.count("run") == 8
    assert stages.count("measure") == 2


# ---------------------------------------------------------------------------
# resumability


def test_rerun_is_idempotent(tiny_store):
    store, config, _, _ = tiny_store
    before = {name: read_bytes(store, name)
              for name in ("runs.csv", "interpretability.csv", "envs.csv")}
    rerun_log = []
    run(config, log=rerun_log.append)
    after = {name: read_bytes(store, name) for name in before}
    assert after == before
    assert not any(line.startswith("[run]") for line in rerun_log)


def test_run_keys_cover_all_rows(tiny_store):
    store, _, _, _ = tiny_store
    assert len(store.run_keys()) == len(store.read("runs.csv"))


# ---------------------------------------------------------------------------
# reporting


def test_reports_are_pure(tiny_store):
    store, _, _, _ = tiny_store
    paths = {name: report(store, name) for name in FIGURES}
    first = {name: paths[name].read_bytes() for name in FIGURES}
    for name in FIGURES:
        assert report(store, name).read_bytes() == first[name]


def test_tradeoff_rows_match_measurements(tiny_store):
    store, _, _, _ = tiny_store
    path = report(store, "tradeoff")
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == len(store.read("interpretability.csv"))
    for row in rows:
        assert float(row["step_time_s"]) > 0.0
        assert int(row["size_bytes"]) > 0
        assert float(row["return_ci_lo"]) <= float(row["mean_return"]) \
            <= float(row["return_ci_hi"])


def test_imitation_report_pools_variants(tiny_store):
    store, _, _, _ = tiny_store
    rows = list(csv.DictReader(report(store, "imitation").open()))
    pooled = {r["variant"]: r for r in rows if r["env"] == "__all__"}
    assert set(pooled) == {"bc", "dagger"}
    for row in pooled.values():
        assert int(row["n_runs"]) == 4
        assert float(row["ci_lo"]) <= float(row["iqm_normalized"]) \
            <= float(row["ci_hi"])


def test_profiles_report_fractions_decrease(tiny_store):
    store, _, _, _ = tiny_store
    rows = list(csv.DictReader(report(store, "profiles").open()))
    by_group = {}
    for r in rows:
        by_group.setdefault((r["env"], r["variant"]), []).append(
            (float(r["tau"]), float(r["fraction"])))
    for series in by_group.values():
        fractions = [f for _, f in sorted(series)]
        assert all(a >= b for a, b in zip(fractions, fractions[1:]))
        assert fractions[0] == 1.0


def test_empty_verification_figure_is_marked(tiny_store):
    store, _, _, _ = tiny_store
    text = report(store, "verification").read_text(encoding="utf-8")
    assert EMPTY_FIGURE_MARKER in text


def test_unknown_figure_rejected(tiny_store):
    store, _, _, _ = tiny_store
    with pytest.raises(ConfigError, match="unknown figure"):
        report(store, "bogus")


def test_importance_needs_multiple_envs(tiny_store):
    # single-env store: the fit is degenerate but must still sum to 100
    store, _, _, _ = tiny_store
    rows = list(csv.DictReader(report(store, "importance").open()))
    if rows:
        total = sum(float(r["importance"]) for r in rows)
        assert np.isclose(total, 100.0) or total == 0.0


# ---------------------------------------------------------------------------
# integrity


def test_orphan_measurement_row_fails_integrity(tmp_path):
    store = ResultStore(tmp_path / "s")
    fields = {"env": "CartPole", "class_label": "linear", "variant": "bc",
              "rep": "0", "samples": "1200", "param_count": "3",
              "size_bytes": "10", "step_time_s": "1e-6", "step_ci_lo": "0.0",
              "step_ci_hi": "1.0", "episode_time_s": "1e-3",
              "folded_step_time_s": "1e-6", "folded_ci_lo": "0.0",
              "folded_ci_hi": "1.0", "mean_return": "1.0",
              "normalized_return": "1.0", "policy_path": "policies/x.txt"}
    store._append("interpretability.csv", fields)
    with pytest.raises(ValidationError, match="without run row"):
        store.check_integrity()


def test_fresh_store_passes_integrity(tmp_path):
    ResultStore(tmp_path / "s").check_integrity()


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_reads_lists_and_comments():
    config = parse_config(CONFIG_TEXT)
    assert config.envs == ("CartPole",)
    assert config.variants == ("bc", "dagger")
    assert config.classes == ("linear", "axis_tree-8")
    assert config.total_samples == 1200
    assert config.verify is False


def test_parse_config_defaults_cover_full_sweep():
    config = parse_config("")
    assert len(config.envs) == 5
    assert len(config.classes) == 15
    assert config.repetitions == 2


def test_paper_scale_raises_budget():
    config = parse_config("paper_scale = true")
    assert config.total_samples == PAPER_SAMPLE_BUDGETS[-1]
    # explicit budget wins over the flag
    config = parse_config("paper_scale = true\ntotal_samples = 777")
    assert config.total_samples == 777


def test_overrides_win():
    config = parse_config(CONFIG_TEXT, overrides=["total_samples=999",
                                                  "envs=Acrobot"])
    assert config.total_samples == 999
    assert config.envs == ("Acrobot",)


@pytest.mark.parametrize("text, message", [
    ("total_samples = 1200\ntotal_samples = 99", "duplicate key"),
    ("budget = 3", "unknown key"),
    ("repetitions = many", "expects a number"),
    ("verify = maybe", "expects true/false"),
    ("just some words", "expected key = value"),
])
def test_parse_config_rejects_malformed(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_bad_override_format_rejected():
    with pytest.raises(ConfigError, match="not key=value"):
        parse_config("", overrides=["envs"])
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config("", overrides=["budget=3"])


@pytest.mark.parametrize("kwargs, message", [
    (dict(envs=("Lander",)), "unknown env"),
    (dict(envs=()), "at least one env"),
    (dict(variants=("sac",)), "unknown variant"),
    (dict(classes=("axis_tree-weird",)), "cannot parse class label"),
    (dict(repetitions=0), "repetitions"),
    (dict(eval_episodes=0), "episode counts"),
    (dict(verify=True, verify_envs=("Acrobot",), envs=("CartPole",)),
     "not in envs"),
    (dict(verify=True, verify_classes=("linear",),
          classes=("axis_tree-8",)), "not in classes"),
    (dict(cell_timeout_s=0.0), "timeouts must be positive"),
])
def test_experiment_config_validation(kwargs, message):
    with pytest.raises(ConfigError, match=message):
        ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# command line entry point


def test_cli_imitate_writes_policy(tmp_path, capsys):
    out = tmp_path / "student.txt"
    code = main(["imitate", "--env", "CartPole", "--variant", "bc",
                 "--class-label", "linear", "--samples", "400",
                 "--eval-episodes", "3", "--out", str(out)])
    assert code == 0
    assert "normalized" in capsys.readouterr().out
    assert load_policy(out).predict([0.0, 0.0, 0.0, 0.0]) in (0, 1)


def test_cli_measure_emits_program(tiny_store, tmp_path, capsys):
    store, _, _, _ = tiny_store
    row = store.read("interpretability.csv")[0]
    emitted = tmp_path / "program.txt"
    code = main(["measure", "--env", row["env"],
                 "--policy", str(store.root / row["policy_path"]),
                 "--episodes", "3", "--emit", str(emitted)])
    assert code == 0
    text = emitted.read_text(encoding="utf-8")
    assert "action" in text
    out = capsys.readouterr().out
    assert "size_bytes" in out and "step_time_s" in out


def test_cli_verify_writes_csv(tiny_store, tmp_path, capsys):
    store, _, _, _ = tiny_store
    row = next(r for r in store.read("runs.csv")
               if r["class_label"] == "axis_tree-8")
    out = tmp_path / "verdicts.csv"
    code = main(["verify", "--env", "CartPole",
                 "--policy", str(store.root / row["policy_path"]),
                 "--queries", "5", "--csv", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 5
    assert all(r["status"] in ("SAT", "UNSAT", "UNKNOWN") for r in rows)
    assert "median UNSAT" in capsys.readouterr().out


def test_cli_report_all(tiny_store, capsys):
    store, _, _, _ = tiny_store
    code = main(["report", "--store", str(store.root)])
    assert code == 0
    assert capsys.readouterr().out.count("wrote ") == len(FIGURES)


def test_cli_run_with_overrides(tmp_path, capsys):
    out_dir = tmp_path / "mini"
    code = main(["run", "--out", str(out_dir),
                 "--set", "envs=CartPole", "--set", "variants=bc",
                 "--set", "classes=linear", "--set", "repetitions=1",
                 "--set", "total_samples=400", "--set", "eval_episodes=3",
                 "--set", "measure_episodes=3"])
    assert code == 0
    assert "run complete" in capsys.readouterr().out
    store = ResultStore(out_dir)
    assert len(store.read("runs.csv")) == 1
    assert len(store.read("interpretability.csv")) == 1


def test_cli_missing_policy_exits_one(capsys):
    code = main(["measure", "--env", "CartPole", "--policy", "no-such.txt"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_unknown_verb_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_unknown_env_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["imitate", "--env", "Breakout", "--variant", "bc",
              "--class-label", "linear"])
    assert exc.value.code == 2
