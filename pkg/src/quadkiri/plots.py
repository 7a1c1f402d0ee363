"""Report figures rendered next to the delimited outputs.

Every CLI report path that writes CSV/JSONL also drops a matplotlib figure
alongside it; plotting stays out of the library core.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["bench_figure", "grpo_figure", "solve_figure"]


def bench_figure(rows: list[dict], path: Path) -> None:
    """Wall-clock time vs grid size, one line per solver, log time axis."""
    methods = sorted({r["method"] for r in rows})
    grids = sorted({r["grid"] for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for m in methods:
        means = [
            sum(r["seconds"] for r in rows if r["method"] == m and r["grid"] == g)
            / max(sum(1 for r in rows if r["method"] == m and r["grid"] == g), 1)
            for g in grids
        ]
        ax.plot(grids, means, marker="o", label=m)
    ax.set_yscale("log")
    ax.set_xlabel("grid size")
    ax.set_ylabel("mean solve time [s]")
    ax.set_xticks(grids)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def grpo_figure(trace: list[dict], path: Path) -> None:
    """Reward, aligned IoU and ratio-field variation against environment calls."""
    calls = [t["call_count"] for t in trace]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(calls, [t["mean_reward"] for t in trace], lw=0.8)
    axes[0].set_ylabel("mean group reward")
    axes[1].plot(calls, [t["best_siou"] if t["best_siou"] is not None else float("nan")
                         for t in trace], lw=0.8, color="tab:green")
    axes[1].set_ylabel("best-candidate sIoU")
    axes[2].plot(calls, [t["tv_of_best"] for t in trace], lw=0.8, color="tab:red")
    axes[2].set_ylabel("TV of best candidate")
    for ax in axes:
        ax.set_xlabel("environment calls")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def solve_figure(records: list[dict], path: Path) -> None:
    """Per-target aligned IoU with the split mean."""
    sious = [r["siou"] for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(sious)), sious, color="tab:blue", alpha=0.8)
    if sious:
        mean = sum(sious) / len(sious)
        ax.axhline(mean, color="tab:red", ls="--", label=f"mean {mean:.3f}")
        ax.legend()
    ax.set_xlabel("target")
    ax.set_ylabel("sIoU")
    ax.set_ylim(0, 1)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
