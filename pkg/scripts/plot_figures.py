"""Plot the figure-data CSVs a report emits.

Reads figures/*.csv from a result store (regenerate them first with
`unfoldrl report --store <dir>`) and writes one PNG per figure next to the
CSVs.  Requires matplotlib, which the core package deliberately does not.

Usage: python scripts/plot_figures.py --store results [--out results/figures]
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib is required: pip install matplotlib", file=sys.stderr)
    sys.exit(1)


def read_rows(path: Path):
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        return [row for row in csv.DictReader(fh)
                if not row.get("env", "").startswith("#")]


def plot_tradeoff(rows, out: Path):
    envs = sorted({r["env"] for r in rows})
    axes_spec = [("step_time_s", "step time (s)", "tradeoff-step.png"),
                 ("size_bytes", "program size (bytes)", "tradeoff-size.png"),
                 ("episode_time_s", "episode time (s)", "tradeoff-episode.png")]
    for key, xlabel, name in axes_spec:
        fig, axes = plt.subplots(1, len(envs), figsize=(4 * len(envs), 3.2),
                                 sharey=False, squeeze=False)
        for ax, env in zip(axes[0], envs):
            for row in rows:
                if row["env"] != env:
                    continue
                x = float(row[key])
                y = float(row["mean_return"])
                ax.scatter(x, y, s=18)
                ax.annotate(row["class_label"], (x, y), fontsize=6,
                            textcoords="offset points", xytext=(3, 3))
            ax.set_xscale("log")
            ax.set_title(env, fontsize=9)
            ax.set_xlabel(xlabel, fontsize=8)
        axes[0][0].set_ylabel("mean return", fontsize=8)
        fig.tight_layout()
        fig.savefig(out / name, dpi=150)
        plt.close(fig)
        print(f"wrote {out / name}")


def plot_imitation(rows, out: Path):
    pooled = [r for r in rows if r["env"] == "__all__"]
    if not pooled:
        return
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for i, row in enumerate(sorted(pooled, key=lambda r: r["variant"])):
        center = float(row["iqm_normalized"])
        lo, hi = float(row["ci_lo"]), float(row["ci_hi"])
        ax.errorbar([center], [i], xerr=[[center - lo], [hi - center]],
                    fmt="o", capsize=4)
        ax.text(center, i + 0.15, row["variant"], ha="center", fontsize=8)
    ax.set_yticks([])
    ax.set_xlabel("IQM normalized return (95% CI)", fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "imitation.png", dpi=150)
    plt.close(fig)
    print(f"wrote {out / 'imitation.png'}")


def plot_profiles(rows, out: Path):
    series = defaultdict(list)
    for row in rows:
        if row["env"] == "__all__":
            series[row["variant"]].append(
                (float(row["tau"]), float(row["fraction"])))
    if not series:
        return
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for variant in sorted(series):
        pts = sorted(series[variant])
        ax.plot([t for t, _ in pts], [f for _, f in pts], label=variant)
    ax.set_xlabel("normalized return tau", fontsize=8)
    ax.set_ylabel("fraction of runs > tau", fontsize=8)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "profiles.png", dpi=150)
    plt.close(fig)
    print(f"wrote {out / 'profiles.png'}")


def plot_verification(rows, out: Path):
    if not rows:
        return
    fig, ax = plt.subplots(figsize=(4.5, 3))
    by_env = defaultdict(list)
    for row in rows:
        med = row["median_unsat_time_s"]
        if med and med != "nan":
            by_env[row["env"]].append((row["class_label"], float(med)))
    for env, pts in sorted(by_env.items()):
        labels = [p[0] for p in pts]
        ax.plot(range(len(pts)), [p[1] for p in pts], marker="o", label=env)
        ax.set_xticks(range(len(pts)), labels, fontsize=7, rotation=20)
    ax.set_yscale("log")
    ax.set_ylabel("median UNSAT time (s)", fontsize=8)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "verification.png", dpi=150)
    plt.close(fig)
    print(f"wrote {out / 'verification.png'}")


def plot_importance(rows, out: Path):
    if not rows:
        return
    fig, ax = plt.subplots(figsize=(4.5, 3))
    names = [r["attribute"] for r in rows]
    scores = [float(r["importance"]) for r in rows]
    ax.barh(range(len(names))[::-1], scores)
    ax.set_yticks(range(len(names))[::-1], names, fontsize=7)
    ax.set_xlabel("importance (sums to 100)", fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "importance.png", dpi=150)
    plt.close(fig)
    print(f"wrote {out / 'importance.png'}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--store", required=True, help="result store directory")
    parser.add_argument("--out", default=None, help="PNG directory "
                        "(default: <store>/figures)")
    args = parser.parse_args()
    fig_dir = Path(args.store) / "figures"
    out = Path(args.out) if args.out else fig_dir
    out.mkdir(parents=True, exist_ok=True)

    plot_tradeoff(read_rows(fig_dir / "tradeoff.csv"), out)
    plot_imitation(read_rows(fig_dir / "imitation.csv"), out)
    plot_profiles(read_rows(fig_dir / "profiles.csv"), out)
    plot_verification(read_rows(fig_dir / "verification.csv"), out)
    plot_importance(read_rows(fig_dir / "importance.csv"), out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
