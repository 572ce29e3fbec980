"""Gradient-weighted relevance maps from the last graph-attention layer."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataset import EPOCH_SAMPLES, EPOCH_SECONDS, normalize_epoch
from .dsp import CleanSignal
from .model import Model
from .plotting import HEATMAP_CMAP, heatmap_figure


class ExplainError(RuntimeError):
    pass


@dataclass
class Heatmap:
    values: np.ndarray  # (12, 384) in [0, 1]
    logit: float
    probability: float
    feature_map: np.ndarray  # (12, F) normalised relevance before time alignment
    colormap: str = HEATMAP_CMAP
    start_time: float | None = None


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def align_to_time(feature_map: np.ndarray, n_samples: int = EPOCH_SAMPLES) -> np.ndarray:
    """Linear interpolation of the feature axis onto ``n_samples`` time points.

    Feature ``f`` of ``F`` is centred on sample ``(f + 0.5) * n / F - 0.5``;
    values beyond the outer centres are held constant.
    """
    n_feat = feature_map.shape[-1]
    centres = (np.arange(n_feat) + 0.5) * n_samples / n_feat - 0.5
    t = np.arange(n_samples)
    return np.stack([np.interp(t, centres, row) for row in feature_map])


def relevance_from_gradients(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """``ReLU(G * w)`` with ``w`` the node-averaged gradient per feature, min-max scaled."""
    weights = gradients.mean(axis=0)
    return _minmax(np.maximum(activations * weights[None, :], 0.0))


def gradcam(model: Model, epoch: np.ndarray, logit_scale: float = 1.0) -> Heatmap:
    """Heatmap for one ``(12, 384)`` epoch; the model is run in eval mode.

    ``logit_scale`` multiplies the class score before differentiation (for
    invariance checks).
    """
    epoch = np.asarray(epoch)
    if epoch.ndim != 2:
        raise ExplainError(f"gradcam explains a single (12, 384) epoch, got {epoch.shape}")
    trace: dict = {}
    logits = model.forward(epoch[None], train=False, trace=trace)
    g = trace.get("last_gat")
    if g is None or not g.requires_grad:
        raise ExplainError("last GAT activations were not captured with gradient tracking")
    score = ad.mul(ad.sum_(logits), logit_scale)
    (dg,) = ad.grad(score, [g])
    fmap = relevance_from_gradients(g.data[0].astype(np.float64), dg[0].astype(np.float64))
    values = _minmax(align_to_time(fmap, epoch.shape[-1]))
    logit = float(logits.data[0])
    prob = float(ad.sigmoid(ad.Tensor(logits.data)).data[0])
    return Heatmap(values=values, logit=logit, probability=prob, feature_map=fmap)


def save_heatmap_csv(heatmap: Heatmap, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        for row in heatmap.values:
            w.writerow([f"{v:.6f}" for v in row])
    return path


def load_heatmap_csv(path) -> np.ndarray:
    with Path(path).open() as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def render_heatmap(heatmap: Heatmap, epoch: np.ndarray, path, seizure: bool | None = None) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    if seizure is None:
        seizure = heatmap.probability > 0.5
    csv_path = save_heatmap_csv(heatmap, base.with_suffix(".csv"))
    t0 = heatmap.start_time or 0.0
    title = f"t = {t0:.0f} s, p = {heatmap.probability:.3f}"
    svg_path = heatmap_figure(epoch, heatmap.values, base.with_suffix(".svg"), seizure=seizure, t0=t0, title=title)
    return csv_path, svg_path


def window_starts(n_seconds: int) -> range:
    if n_seconds < EPOCH_SECONDS:
        raise ExplainError(f"signal of {n_seconds} s is shorter than one {EPOCH_SECONDS} s epoch")
    return range(0, n_seconds - EPOCH_SECONDS + 1)


def explain_stream(model: Model, clean: CleanSignal, threshold: float = 0.5, explain: bool = True) -> list[dict]:
    """Probability for every 12 s window at 1 s stride; heatmaps for positives.

    Each window is classified on its own so the numbers are identical to the
    streaming path.
    """
    fs = int(clean.fs)
    n = EPOCH_SECONDS * fs
    out = []
    for t in window_starts(clean.channels.shape[1] // fs):
        epoch = normalize_epoch(clean.channels[:, t * fs : t * fs + n])
        probs, _ = model.classify(epoch[None])
        p = float(probs[0])
        rec = {"t": t, "probability": p, "seizure": p > threshold}
        if explain and rec["seizure"]:
            hm = gradcam(model, epoch)
            hm.start_time = float(t)
            rec["heatmap"] = hm
            rec["epoch"] = epoch
        out.append(rec)
    return out
