"""Figures for the report path. Uses the Agg backend; never opens a window."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _smooth(y, window):
    y = np.asarray(y, dtype=float)
    if window <= 1 or len(y) < window:
        return y
    k = np.ones(window) / window
    return np.convolve(y, k, mode="valid")


def loss_curve(path, loss_history, window: int = 50, title: str | None = None) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    y = np.asarray(loss_history, dtype=float)
    ax.plot(np.arange(1, len(y) + 1), y, lw=0.5, color="0.75", label="per step")
    s = _smooth(y, window)
    if len(s) != len(y):
        ax.plot(np.arange(window, len(y) + 1), s, lw=1.5, color="C0", label=f"mean of {window}")
    ax.set_xlabel("step")
    ax.set_ylabel("v-loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def ablation_bars(path, rows: list[dict], baseline: dict | None = None, title: str | None = None) -> Path:
    """Two panels (toy-FAD, toy-KL), one bar per variant with seed spread as error bars."""
    path = Path(path)
    names = [r["variant"] for r in rows]
    x = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.4))
    for ax, key in zip(axes, ("fad", "kl")):
        mean = [r[key] for r in rows]
        err = [r.get(key + "_std", 0.0) for r in rows]
        ax.bar(x, mean, yerr=err, color=[f"C{i}" for i in range(len(rows))], capsize=3)
        if baseline is not None:
            ax.axhline(baseline[key], ls="--", color="k", lw=1, label="unconditional")
            ax.legend(frameon=False, fontsize=8)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel("toy-" + key.upper())
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
