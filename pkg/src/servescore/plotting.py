"""Figures written next to the tabular reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

# no timestamps or version strings, so reruns are byte-identical
PNG_METADATA = {"Software": None}

plt.rcParams.update({
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
})


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_METADATA)
    plt.close(fig)


def plot_predictor_scatter(table: pd.DataFrame, serve_type: int, path, title: str = "") -> None:
    """2x2 grid: (SQS, wElo) against (serve efficiency, win percentage)."""
    sub = table[table["serve_type"] == serve_type]
    fig, axes = plt.subplots(2, 2, figsize=(7, 5.5), sharey="col")
    for i, (pred, plabel) in enumerate([("sqs", f"SQS$_{serve_type}$ (log-odds)"), ("welo", "wElo")]):
        for j, (out, olabel) in enumerate([("serve_eff", "test serve efficiency"),
                                           ("win_pct", "test win percentage")]):
            ax = axes[i, j]
            x, y = sub[pred].to_numpy(float), sub[out].to_numpy(float)
            ax.scatter(x, y, s=np.sqrt(sub["n_points"].to_numpy(float)) * 2, alpha=0.6,
                       edgecolors="none")
            if len(x) >= 2 and np.ptp(x) > 0:
                slope, icpt = np.polyfit(x, y, 1)
                xs = np.linspace(x.min(), x.max(), 50)
                ax.plot(xs, icpt + slope * xs, color="C3", lw=1)
            ax.set_xlabel(plabel)
            ax.set_ylabel(olabel)
            ax.grid(True, alpha=0.3)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_top_servers(entries, path, title: str = "", k: int = 10) -> None:
    """Horizontal bars of the top-k centered scores, best at the top."""
    fig, ax = plt.subplots(figsize=(5, 0.3 * max(len(entries[:k]), 1) + 1.0))
    top = list(entries[:k])[::-1]
    ax.barh([e.server for e in top], [e.sqs_centered for e in top], color="C0")
    ax.set_xlabel("centered SQS (log-odds)")
    ax.axvline(0.0, color="0.3", lw=0.8)
    if title:
        ax.set_title(title)
    _save(fig, path)
