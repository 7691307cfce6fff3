"""Learning-curve figures built only from metrics CSV files."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .agent import read_metrics_csv


def seed_curves(csv_paths, column="normalized_return"):
    """Stack per-seed curves on their common step grid: ``(steps, values (n_seeds, n_steps))``."""
    runs = [read_metrics_csv(p) for p in csv_paths]
    runs = [r for r in runs if r]
    if not runs:
        return np.zeros(0), np.zeros((0, 0))
    n = min(len(r["env_steps"]) for r in runs)
    steps = runs[0]["env_steps"][:n]
    return steps, np.stack([r[column][:n] for r in runs])


def median_across(curves):
    """Median over environments of per-environment seed-mean curves, truncated to the shortest."""
    means = [v.mean(axis=0) for _, v in curves if v.size]
    if not means:
        return np.zeros(0)
    n = min(len(m) for m in means)
    return np.median(np.stack([m[:n] for m in means]), axis=0)


def plot_runs(groups, out_dir, column="normalized_return"):
    """``groups`` maps ``(env, algorithm)`` to metric CSV paths, one per seed.

    Writes ``curves.svg`` (mean +/- std across seeds, one panel per
    environment) and ``median.svg`` (median across environments per
    algorithm). Returns the written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    envs = sorted({e for e, _ in groups})
    algos = sorted({a for _, a in groups})
    fig, axes = plt.subplots(1, len(envs), figsize=(5 * len(envs), 3.5), squeeze=False)
    per_algo = defaultdict(list)
    for ax, env in zip(axes[0], envs):
        for algo in algos:
            paths = groups.get((env, algo))
            if not paths:
                continue
            steps, vals = seed_curves(paths, column)
            if not vals.size:
                continue
            per_algo[algo].append((steps, vals))
            mu, sd = vals.mean(axis=0), vals.std(axis=0)
            ax.plot(steps, mu, label=algo)
            ax.fill_between(steps, mu - sd, mu + sd, alpha=0.2)
        ax.set_title(env)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(column.replace("_", " "))
        ax.legend(fontsize=8)
    fig.tight_layout()
    curves_path = out_dir / "curves.svg"
    fig.savefig(curves_path, format="svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for algo, curves in sorted(per_algo.items()):
        med = median_across(curves)
        steps = min((s for s, _ in curves), key=len)[: len(med)]
        ax.plot(steps, med, label=algo)
    ax.set_xlabel("environment steps")
    ax.set_ylabel(f"median {column.replace('_', ' ')}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    median_path = out_dir / "median.svg"
    fig.savefig(median_path, format="svg")
    plt.close(fig)
    return [curves_path, median_path]
