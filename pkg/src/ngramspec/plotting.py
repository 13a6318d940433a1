"""Figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    # no Software/date metadata, so reruns give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _grid(ax, values, k_values, w_values, title, cmap, fmt=None):
    im = ax.imshow(values, origin="lower", aspect="auto", cmap=cmap)
    for axis, vals in ((ax.yaxis, k_values), (ax.xaxis, w_values)):
        step = 1 if len(vals) <= 12 else 4
        ticks = list(range(0, len(vals), step))
        axis.set_ticks(ticks)
        axis.set_ticklabels([vals[i] for i in ticks])
    ax.set_xlabel("w (tokens speculated)")
    ax.set_ylabel("k (batch rows)")
    ax.set_title(title)
    if fmt:
        for i in range(len(k_values)):
            for j in range(len(w_values)):
                ax.text(j, i, format(values[i, j], fmt), ha="center", va="center", fontsize=7)
    return im


def plot_heatmaps(grids, path):
    """One panel per context length; each grid is a ``LatencyGrid``."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(grids), figsize=(4.2 * len(grids), 3.6), squeeze=False)
        vmax = max(float(g.values.max()) for g in grids)
        for ax, g in zip(axes[0], grids):
            im = _grid(ax, g.values, g.k_values, g.w_values, f"slowdown, l={g.l}", "magma_r")
            im.set_clim(1.0, vmax)
        fig.colorbar(im, ax=axes[0].tolist(), shrink=0.85, label="slowdown vs (k, w) = (1, 0)")
        _save(fig, path)


def plot_sweep(k_values, w_values, tpc, speedup, path, title=""):
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(9.5, 3.4))
        for ax, vals, name, cmap in ((axes[0], tpc, "tokens per call", "viridis"),
                                     (axes[1], speedup, "simulated speedup", "cividis")):
            im = _grid(ax, np.asarray(vals), list(k_values), list(w_values), name, cmap, fmt=".2f")
            fig.colorbar(im, ax=ax, shrink=0.85)
        if title:
            fig.suptitle(title)
        _save(fig, path)


def plot_ablation(acceptance, rank, allocation, path, title=""):
    """Bar charts of the three per-call histograms.

    ``rank[0]`` (no draft token accepted) is drawn in grey at position 0.
    """
    with plt.rc_context(RC):
        fig, axes = plt.subplots(3, 1, figsize=(6.0, 6.6))
        axes[0].bar(range(len(acceptance)), acceptance, color="C0")
        axes[0].set_xlabel("accepted draft tokens")
        axes[1].bar(range(len(rank)), rank, color=["0.6"] + ["C1"] * (len(rank) - 1))
        axes[1].set_xlabel("rank of winning draft within its strategy (0 = none accepted)")
        axes[2].bar(range(len(allocation)), allocation, color="C2")
        axes[2].set_xlabel("context rows in the batch (rest from the model bigram)")
        for ax in axes:
            ax.set_ylabel("calls")
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        _save(fig, path)
