"""Epoch extraction, per-epoch normalisation, subject-wise splits and the epoch store."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import NON_SEIZURE, SEIZURE, CleanSignal

EPOCH_SECONDS = 12
EPOCH_SAMPLES = 384
N_CHANNELS = 12
SEIZURE_STRIDE = 1
NON_SEIZURE_STRIDE = 2


class EpochStoreError(ValueError):
    """Malformed or inconsistent epoch-store files."""


class SplitError(ValueError):
    pass


@dataclass
class Epoch:
    data: np.ndarray  # (12, 384)
    label: int
    subject_id: str
    start_time: float


@dataclass
class SplitPlan:
    mode: str  # "holdout" or "kfold"
    folds: dict[str, int]  # subject -> fold; holdout uses 0 = train, 1 = test
    seed: int
    n_folds: int = 2

    def train_test(self, fold: int = 0) -> tuple[list[str], list[str]]:
        """Subject lists for one fold (holdout ignores ``fold``)."""
        if self.mode == "holdout":
            test_fold = 1
        else:
            if not 0 <= fold < self.n_folds:
                raise SplitError(f"fold {fold} outside 0..{self.n_folds - 1}")
            test_fold = fold
        train = sorted(s for s, f in self.folds.items() if f != test_fold)
        test = sorted(s for s, f in self.folds.items() if f == test_fold)
        return train, test

    def fold_sizes(self) -> list[int]:
        return [sum(1 for f in self.folds.values() if f == k) for k in range(self.n_folds)]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "folds": dict(sorted(self.folds.items())), "seed": self.seed, "n_folds": self.n_folds}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(mode=d["mode"], folds=dict(d["folds"]), seed=int(d["seed"]), n_folds=int(d["n_folds"]))


def _runs(labels: np.ndarray, lo: int, hi: int) -> list[tuple[int, int, int]]:
    """Maximal constant-label runs ``(label, start, end)`` of ``labels[lo:hi]``."""
    runs = []
    start = lo
    for t in range(lo + 1, hi + 1):
        if t == hi or labels[t] != labels[start]:
            runs.append((int(labels[start]), start, t))
            start = t
    return runs


def epoch_windows(clean: CleanSignal) -> list[tuple[int, int]]:
    """``(start_second, label)`` for every window emitted from ``clean``.

    Windows sit inside one valid segment and inside one pure consensus run;
    seizure runs are tiled with a 1 s stride, non-seizure runs with 2 s.
    """
    fs = int(clean.fs)
    labels = clean.annotations
    out = []
    for s, e in clean.valid_segments:
        lo, hi = -(-s // fs), min(e // fs, len(labels))
        if hi - lo < EPOCH_SECONDS:
            continue
        for label, r0, r1 in _runs(labels, lo, hi):
            if label == SEIZURE:
                stride = SEIZURE_STRIDE
            elif label == NON_SEIZURE:
                stride = NON_SEIZURE_STRIDE
            else:
                continue
            out.extend((t, label) for t in range(r0, r1 - EPOCH_SECONDS + 1, stride))
    out.sort()
    return out


def normalize_epoch(data: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-row z-score; rows with zero variance become zeros."""
    data = np.asarray(data, dtype=np.float64)
    mu = data.mean(axis=-1, keepdims=True)
    centered = data - mu
    sd = centered.std(axis=-1, keepdims=True)
    out = np.where(sd > 0, centered / (sd + eps), 0.0)
    return out.astype(np.float32)


def extract_epochs(clean: CleanSignal, normalize: bool = True) -> list[Epoch]:
    fs = int(clean.fs)
    n = EPOCH_SECONDS * fs
    epochs = []
    for t, label in epoch_windows(clean):
        block = clean.channels[:, t * fs : t * fs + n]
        data = normalize_epoch(block) if normalize else block.astype(np.float32)
        epochs.append(Epoch(data=data, label=label, subject_id=clean.subject_id, start_time=float(t)))
    return epochs


def make_split(subjects, mode: str = "holdout", seed: int = 0, n_folds: int = 10, test_fraction: float = 0.2) -> SplitPlan:
    """Seeded subject-level split: 80/20 holdout or k-fold."""
    subjects = sorted(set(subjects))
    order = [subjects[i] for i in np.random.default_rng(seed).permutation(len(subjects))]
    if mode == "holdout":
        if len(subjects) < 2:
            raise SplitError("holdout split needs at least 2 subjects")
        n_test = max(1, int(round(test_fraction * len(subjects))))
        folds = {s: (1 if i < n_test else 0) for i, s in enumerate(order)}
        return SplitPlan(mode="holdout", folds=folds, seed=seed, n_folds=2)
    if mode == "kfold":
        if len(subjects) < n_folds:
            raise SplitError(f"{n_folds}-fold split needs at least {n_folds} subjects, got {len(subjects)}")
        folds = {}
        for k, chunk in enumerate(np.array_split(np.arange(len(order)), n_folds)):
            for i in chunk:
                folds[order[i]] = k
        return SplitPlan(mode="kfold", folds=folds, seed=seed, n_folds=n_folds)
    raise SplitError(f"unknown split mode {mode!r}")


def class_balance_report(labels) -> dict:
    labels = np.asarray(labels)
    n_seiz = int(np.sum(labels == SEIZURE))
    n_non = int(np.sum(labels == NON_SEIZURE))
    return {
        "seizure": n_seiz,
        "non_seizure": n_non,
        "total": n_seiz + n_non,
        "ratio": n_seiz / n_non if n_non else (float("inf") if n_seiz else 0.0),
    }


@dataclass
class EpochStore:
    """In-memory form of the epoch-store files (manifest JSON + float32 payload)."""

    data: np.ndarray  # (n, 12, 384) float32
    labels: np.ndarray
    subjects: list[str]
    start_times: np.ndarray
    seed: int = 0
    split: SplitPlan | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_epochs(cls, epochs: list[Epoch], seed: int = 0) -> "EpochStore":
        epochs = sorted(epochs, key=lambda e: (e.subject_id, e.start_time))
        if epochs:
            data = np.stack([e.data for e in epochs]).astype(np.float32)
        else:
            data = np.zeros((0, N_CHANNELS, EPOCH_SAMPLES), np.float32)
        return cls(
            data=data,
            labels=np.array([e.label for e in epochs], dtype=np.int64),
            subjects=[e.subject_id for e in epochs],
            start_times=np.array([e.start_time for e in epochs], dtype=np.float64),
            seed=seed,
        )

    def subject_ids(self) -> list[str]:
        return sorted(set(self.subjects))

    def indices_for(self, subjects) -> np.ndarray:
        wanted = set(subjects)
        return np.array([i for i, s in enumerate(self.subjects) if s in wanted], dtype=np.int64)

    def manifest(self) -> dict:
        return {
            "format": "neogat-epochs/1",
            "count": len(self),
            "shape": [N_CHANNELS, EPOCH_SAMPLES],
            "dtype": "float32-le",
            "seed": self.seed,
            "class_balance": class_balance_report(self.labels),
            "split": self.split.to_dict() if self.split else None,
            "payload_sha256": hashlib.sha256(self._payload()).hexdigest(),
            "epochs": [
                {"subject": s, "start": float(t), "label": int(y)}
                for s, t, y in zip(self.subjects, self.start_times, self.labels)
            ],
            **self.extra,
        }

    def _payload(self) -> bytes:
        return np.ascontiguousarray(self.data, dtype="<f4").tobytes()

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "epochs.f32").write_bytes(self._payload())
        (directory / "manifest.json").write_text(json.dumps(self.manifest(), indent=1))
        return directory

    @classmethod
    def load(cls, directory) -> "EpochStore":
        directory = Path(directory)
        try:
            man = json.loads((directory / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise EpochStoreError(f"cannot read epoch manifest in {directory}: {exc}") from exc
        raw = (directory / "epochs.f32").read_bytes()
        n = int(man["count"])
        c, t = man["shape"]
        if len(raw) != n * c * t * 4:
            raise EpochStoreError(f"payload has {len(raw)} bytes, manifest implies {n * c * t * 4}")
        data = np.frombuffer(raw, dtype="<f4").reshape(n, c, t).astype(np.float32)
        recs = man["epochs"]
        split = SplitPlan.from_dict(man["split"]) if man.get("split") else None
        known = {"format", "count", "shape", "dtype", "seed", "class_balance", "split", "payload_sha256", "epochs"}
        return cls(
            data=data,
            labels=np.array([r["label"] for r in recs], dtype=np.int64),
            subjects=[r["subject"] for r in recs],
            start_times=np.array([r["start"] for r in recs], dtype=np.float64),
            seed=int(man.get("seed", 0)),
            split=split,
            extra={k: v for k, v in man.items() if k not in known},
        )
