"""Epoch-level detection metrics and fold aggregation."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

THRESHOLD = 0.5


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given input (e.g. single-class labels)."""


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, probs, labels, threshold: float = THRESHOLD) -> "Confusion":
        probs = np.asarray(probs)
        labels = np.asarray(labels).astype(bool)
        pred = probs > threshold
        return cls(
            tp=int(np.sum(pred & labels)),
            fp=int(np.sum(pred & ~labels)),
            tn=int(np.sum(~pred & ~labels)),
            fn=int(np.sum(~pred & labels)),
        )


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """False/true positive rates at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # cut only where the score changes so tied scores move diagonally
    cuts = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[cuts]
    fps = (cuts + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return fpr, tpr


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; ties count one half."""
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def cohen_kappa(c: Confusion) -> float:
    n = c.n
    if n == 0:
        raise UndefinedMetricError("kappa of an empty confusion matrix")
    p_o = (c.tp + c.tn) / n
    p_yes = ((c.tp + c.fn) / n) * ((c.tp + c.fp) / n)
    p_no = ((c.tn + c.fp) / n) * ((c.tn + c.fn) / n)
    p_e = p_yes + p_no
    if p_e == 1:
        return 0.0
    return (p_o - p_e) / (1 - p_e)


def _ratio(num: int, den: int, what: str) -> float:
    if den == 0:
        warnings.warn(f"{what} undefined (0/0); reporting 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return num / den


def precision_recall_accuracy(c: Confusion) -> tuple[float, float, float]:
    precision = _ratio(c.tp, c.tp + c.fp, "precision")
    recall = _ratio(c.tp, c.tp + c.fn, "recall")
    accuracy = _ratio(c.tp + c.tn, c.n, "accuracy")
    return precision, recall, accuracy


def evaluate_predictions(probs, labels, threshold: float = THRESHOLD) -> dict:
    """Per-fold report: accuracy, AUC, recall, precision, kappa and confusion counts."""
    c = Confusion.from_predictions(probs, labels, threshold)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        precision, recall, accuracy = precision_recall_accuracy(c)
    return {
        "n": c.n,
        "accuracy": accuracy,
        "auc": roc_auc(probs, labels),
        "recall": recall,
        "precision": precision,
        "kappa": cohen_kappa(c),
        "tp": c.tp,
        "fp": c.fp,
        "tn": c.tn,
        "fn": c.fn,
    }


def aggregate_folds(reports: list[dict]) -> dict:
    """Mean/sample-std for every rate, plus median and (Q1, Q3) for AUC."""
    if not reports:
        raise ValueError("need at least one fold")
    out: dict = {"n_folds": len(reports)}
    for key in ("accuracy", "auc", "recall", "precision", "kappa"):
        vals = np.array([r[key] for r in reports], dtype=np.float64)
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    auc = np.array([r["auc"] for r in reports], dtype=np.float64)
    q1, med, q3 = np.percentile(auc, [25, 50, 75], method="linear")
    out["auc_median"] = float(med)
    out["auc_iqr"] = [float(q1), float(q3)]
    return out


TABLE_COLUMNS = (
    "fold",
    "accuracy_pct",
    "auc_pct",
    "recall_pct",
    "precision_pct",
    "kappa",
)


def write_report(path, folds: list[dict], aggregate: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"folds": folds, "aggregate": aggregate}, indent=1))
    return path


def write_table_csv(path, folds: list[dict], aggregate: dict) -> Path:
    """Fold rows plus a summary row laid out like the usual results table."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for i, r in enumerate(folds):
            w.writerow([i, *(f"{100 * r[k]:.2f}" for k in ("accuracy", "auc", "recall", "precision")), f"{r['kappa']:.3f}"])
        a = aggregate
        w.writerow(
            [
                "mean",
                f"{100 * a['accuracy_mean']:.2f}+-{100 * a['accuracy_std']:.2f}",
                f"{100 * a['auc_mean']:.2f}+-{100 * a['auc_std']:.2f} | median {100 * a['auc_median']:.2f} "
                f"({100 * a['auc_iqr'][0]:.2f},{100 * a['auc_iqr'][1]:.2f})",
                f"{100 * a['recall_mean']:.2f}",
                f"{100 * a['precision_mean']:.2f}",
                f"{a['kappa_mean']:.3f}",
            ]
        )
    return path
