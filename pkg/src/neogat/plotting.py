"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

from .dsp import CHANNEL_NAMES  # noqa: E402

HEATMAP_CMAP = "bwr"

RC = {
    "font.size": 8,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.fonttype": "none",
}


def trace_colors(relevance: np.ndarray, seizure: bool = True, cmap: str = HEATMAP_CMAP) -> np.ndarray:
    """RGBA per sample; epochs not classified as seizure are drawn all blue."""
    relevance = np.asarray(relevance, dtype=np.float64)
    cm = plt.get_cmap(cmap)
    if not seizure:
        return np.broadcast_to(np.asarray(cm(0.0)), relevance.shape + (4,)).copy()
    return cm(np.clip(relevance, 0, 1))


def _colored_trace(ax, t, y, colors):
    pts = np.column_stack([t, y])
    segs = np.stack([pts[:-1], pts[1:]], axis=1)
    lc = LineCollection(segs, colors=colors[:-1], linewidths=0.8)
    ax.add_collection(lc)
    ax.set_xlim(t[0], t[-1])
    pad = 0.1 * (np.ptp(y) or 1.0)
    ax.set_ylim(y.min() - pad, y.max() + pad)


def heatmap_figure(epoch: np.ndarray, relevance: np.ndarray, path, seizure: bool = True, fs: float = 32.0, t0: float = 0.0, title: str | None = None) -> Path:
    """Twelve stacked traces coloured per sample by relevance."""
    path = Path(path)
    n_ch, n = epoch.shape
    t = t0 + np.arange(n) / fs
    colors = trace_colors(relevance, seizure)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(n_ch, 1, figsize=(7, 0.45 * n_ch + 0.6), sharex=True)
        for c, ax in enumerate(np.atleast_1d(axes)):
            _colored_trace(ax, t, epoch[c], colors[c])
            ax.set_yticks([])
            ax.set_ylabel(CHANNEL_NAMES[c] if n_ch == len(CHANNEL_NAMES) else str(c), rotation=0, ha="right", va="center")
        np.atleast_1d(axes)[-1].set_xlabel("time (s)")
        if title:
            fig.suptitle(title)
        fig.tight_layout(h_pad=0.1)
        fig.savefig(path)
        plt.close(fig)
    return path


def probability_figure(times, probs, path, labels=None, threshold: float = 0.5) -> Path:
    """Predicted seizure probability per window start, with optional reference labels."""
    path = Path(path)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(7, 1.8))
        ax.plot(times, probs, color="C3", lw=1.0, label="predicted probability")
        if labels is not None:
            ax.step(times, labels, where="post", color="k", lw=0.8, label="label")
        ax.axhline(threshold, color="0.6", lw=0.6, ls="--")
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("window start (s)")
        ax.set_ylabel("p(seizure)")
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def roc_figure(curves: list[tuple[np.ndarray, np.ndarray, str]], path) -> Path:
    path = Path(path)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        for fpr, tpr, label in curves:
            ax.plot(fpr, tpr, lw=1.0, label=label)
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.6, ls=":")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_aspect("equal")
        if len(curves) <= 10:
            ax.legend(loc="lower right", frameon=False, fontsize=6)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def training_figure(history: list[dict], path) -> Path:
    path = Path(path)
    ep = [h["epoch"] for h in history]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 2.4))
        ax.plot(ep, [h["loss"] for h in history], color="C0", lw=1.0, label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("focal loss")
        if any("val_auc" in h for h in history):
            ax2 = ax.twinx()
            ax2.plot([h["epoch"] for h in history if "val_auc" in h], [h["val_auc"] for h in history if "val_auc" in h], color="C1", lw=1.0)
            ax2.set_ylabel("val AUC", color="C1")
            ax2.set_ylim(0, 1.02)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
