"""Deterministic synthetic EEG: filtered-noise background with rhythmic 2-4 Hz seizures."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from . import nsdraw
from .dataset import EPOCH_SAMPLES, normalize_epoch
from .dsp import CHANNEL_NAMES, ELECTRODES, RAW_FS, TARGET_FS, RawRecording


@dataclass
class SyntheticSpec:
    subject_id: str
    duration: int  # seconds
    seizure_intervals: list[tuple[float, float]] = field(default_factory=list)
    seed: int = 0
    fs: int = RAW_FS
    seizure_freq: float = 3.0
    seizure_amplitude: float = 60.0  # uV
    background_amplitude: float = 15.0  # uV
    seizure_electrodes: tuple[str, ...] = ELECTRODES
    disagreement_intervals: list[tuple[float, float]] = field(default_factory=list)
    flat_intervals: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 2.0 <= self.seizure_freq <= 4.0:
            raise ValueError("seizure rhythm must lie in 2-4 Hz")
        iv = sorted(self.seizure_intervals)
        for a, b in iv:
            if not 0 <= a < b <= self.duration:
                raise ValueError(f"seizure interval {(a, b)} outside [0, {self.duration}]")
        for (_, b), (c, _) in zip(iv, iv[1:]):
            if c < b:
                raise ValueError("seizure intervals overlap")
        self.seizure_intervals = [tuple(x) for x in iv]


def background_noise(rng: np.random.Generator, n: int, fs: float, amplitude: float, n_channels: int = 1) -> np.ndarray:
    """White noise low-passed at 20 Hz and scaled to ``amplitude`` RMS."""
    sos = signal.butter(4, min(20.0, 0.45 * fs), btype="low", fs=fs, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal((n_channels, n + int(fs))), axis=-1)[:, int(fs) :]
    return amplitude * x / x.std(axis=-1, keepdims=True)


def seizure_waveform(rng: np.random.Generator, t: np.ndarray, freq: float, amplitude: float) -> np.ndarray:
    """Amplitude-modulated oscillation with a slightly drifting frequency."""
    phase0 = rng.uniform(0, 2 * np.pi)
    drift = 0.15 * np.sin(2 * np.pi * rng.uniform(0.02, 0.05) * t + rng.uniform(0, 2 * np.pi))
    envelope = 0.75 + 0.25 * np.sin(2 * np.pi * rng.uniform(0.05, 0.2) * t + rng.uniform(0, 2 * np.pi))
    return amplitude * envelope * np.sin(2 * np.pi * (freq + drift) * t + phase0)


def _in_intervals(t: np.ndarray, intervals) -> np.ndarray:
    mask = np.zeros(t.shape, dtype=bool)
    for a, b in intervals:
        mask |= (t >= a) & (t < b)
    return mask


def generate(spec: SyntheticSpec) -> RawRecording:
    rng = np.random.default_rng(spec.seed)
    n = spec.duration * spec.fs
    t = np.arange(n) / spec.fs
    noise = background_noise(rng, n, spec.fs, spec.background_amplitude, len(ELECTRODES))
    active = _in_intervals(t, spec.seizure_intervals).astype(np.float64)
    # soften onsets/offsets over 0.25 s
    ramp = int(0.25 * spec.fs)
    if ramp > 1 and active.any():
        active = np.convolve(active, np.ones(ramp) / ramp, mode="same")
    electrodes = {}
    for i, name in enumerate(ELECTRODES):
        x = noise[i]
        if name in spec.seizure_electrodes:
            gain = rng.uniform(0.5, 1.5)
            x = x + active * seizure_waveform(rng, t, spec.seizure_freq, gain * spec.seizure_amplitude)
        electrodes[name] = x
    flat = _in_intervals(t, spec.flat_intervals)
    for name in electrodes:
        electrodes[name] = np.where(flat, 0.0, electrodes[name]).astype(np.float32).astype(np.float64)
    secs = np.arange(spec.duration) + 0.5
    truth = _in_intervals(secs, spec.seizure_intervals).astype(np.uint8)
    ann = np.stack([truth, truth, truth])
    dis = _in_intervals(secs, spec.disagreement_intervals)
    ann[2, dis] = 1 - ann[2, dis]
    return RawRecording(subject_id=spec.subject_id, fs=float(spec.fs), electrodes=electrodes, annotations=ann)


def corpus_specs(
    n_subjects: int = 10,
    duration: int = 60,
    seizure_seconds: int = 20,
    seed: int = 0,
    **kwargs,
) -> list[SyntheticSpec]:
    """One seizure per subject at a seeded position, whole-second aligned."""
    root = np.random.SeedSequence(seed)
    specs = []
    for i, child in enumerate(root.spawn(n_subjects)):
        rng = np.random.default_rng(child)
        start = int(rng.integers(0, duration - seizure_seconds + 1))
        specs.append(
            SyntheticSpec(
                subject_id=f"sub{i + 1:02d}",
                duration=duration,
                seizure_intervals=[(start, start + seizure_seconds)] if seizure_seconds else [],
                seed=int(rng.integers(2**31)),
                **kwargs,
            )
        )
    return specs


def write_corpus(specs: list[SyntheticSpec], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [nsdraw.write(generate(s), out / f"{s.subject_id}.nsd") for s in specs]


def synthetic_epochs(
    n: int,
    seed: int = 0,
    seizure_channels=None,
    seizure_fraction: float = 0.5,
    freq: float = 3.0,
    snr: float = 3.0,
    white: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalised ``(n, 12, 384)`` epochs at 32 Hz built directly on bipolar channels.

    Seizure epochs add an amplitude-modulated ``freq`` Hz rhythm to
    ``seizure_channels`` (names or indices; default all). ``white`` selects
    unfiltered white-noise background.
    """
    rng = np.random.default_rng(seed)
    if seizure_channels is None:
        rows = list(range(len(CHANNEL_NAMES)))
    else:
        rows = [CHANNEL_NAMES.index(c) if isinstance(c, str) else int(c) for c in seizure_channels]
    labels = np.zeros(n, dtype=np.int64)
    labels[: int(round(seizure_fraction * n))] = 1
    labels = labels[rng.permutation(n)]
    t = np.arange(EPOCH_SAMPLES) / TARGET_FS
    data = np.empty((n, len(CHANNEL_NAMES), EPOCH_SAMPLES), dtype=np.float32)
    for i in range(n):
        if white:
            x = rng.standard_normal((len(CHANNEL_NAMES), EPOCH_SAMPLES))
        else:
            x = background_noise(rng, EPOCH_SAMPLES, TARGET_FS, 1.0, len(CHANNEL_NAMES))
        if labels[i]:
            for r in rows:
                x[r] += seizure_waveform(rng, t, freq, snr)
        data[i] = normalize_epoch(x)
    return data, labels
