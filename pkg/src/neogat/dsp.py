"""Raw referential EEG -> filtered, decimated 12-channel bipolar montage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

ELECTRODES = ("Fp1", "Fp2", "T3", "T4", "C3", "C4", "CZ", "O1", "O2")

CHANNELS = (
    ("Fp1", "T3"),
    ("T3", "O1"),
    ("Fp1", "C3"),
    ("C3", "O1"),
    ("Fp2", "C4"),
    ("C4", "O2"),
    ("Fp2", "T4"),
    ("T4", "O2"),
    ("T3", "C3"),
    ("C3", "CZ"),
    ("CZ", "C4"),
    ("C4", "T4"),
)
CHANNEL_NAMES = tuple(f"{a}-{b}" for a, b in CHANNELS)

RAW_FS = 256
TARGET_FS = 32
DECIMATION = RAW_FS // TARGET_FS

SEIZURE = 1
NON_SEIZURE = 0
DISAGREEMENT = -1


class MissingElectrodeError(KeyError):
    """A required 10-20 electrode is absent from the recording."""


class FilterDesignError(ValueError):
    pass


class SegmentTooShortError(ValueError):
    pass


@dataclass
class RawRecording:
    subject_id: str
    fs: float
    electrodes: dict[str, np.ndarray]
    annotations: np.ndarray  # (n_annotators, n_seconds) of {0, 1}

    def __post_init__(self) -> None:
        lengths = {len(v) for v in self.electrodes.values()}
        if len(lengths) > 1:
            raise ValueError(f"electrode sequences differ in length: {sorted(lengths)}")
        self.annotations = np.asarray(self.annotations, dtype=np.uint8)

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.electrodes.values()))) if self.electrodes else 0


@dataclass
class CleanSignal:
    """12 x T bipolar signal at 32 Hz; samples outside ``valid_segments`` are zero."""

    subject_id: str
    fs: float
    channels: np.ndarray
    valid_segments: list[tuple[int, int]]
    annotations: np.ndarray  # per-second consensus: 1, 0 or -1 (disagreement)
    channel_names: tuple[str, ...] = field(default=CHANNEL_NAMES)

    @property
    def n_seconds(self) -> int:
        return self.channels.shape[1] // int(self.fs)


@dataclass
class FilterCoefficients:
    sos: np.ndarray  # rows (b0, b1, b2, 1, a1, a2)
    passband: tuple[float, float]
    stopband: tuple[float, float]
    attenuation_db: float
    order: int
    fs: float

    def sections(self) -> list[tuple[float, float, float, float, float]]:
        """Sections as ``(b0, b1, b2, a1, a2)`` with ``a0`` normalised to 1."""
        return [(s[0], s[1], s[2], s[4], s[5]) for s in self.sos]


def derive_montage(raw: RawRecording) -> np.ndarray:
    """Bipolar channels ``electrode_a - electrode_b`` in the fixed 12-channel order."""
    missing = [e for e in ELECTRODES if e not in raw.electrodes]
    if missing:
        raise MissingElectrodeError(f"recording {raw.subject_id!r} lacks electrodes {missing}")
    ref = {e: np.asarray(raw.electrodes[e], dtype=np.float64) for e in ELECTRODES}
    return np.stack([ref[a] - ref[b] for a, b in CHANNELS])


def remove_flat_lines(x: np.ndarray, fs: float, min_duration: float = 1.0) -> list[tuple[int, int]]:
    """Maximal ``[start, end)`` sample ranges not covered by a long all-zero run.

    A run is flat when every channel is exactly zero for strictly longer than
    ``min_duration`` seconds.
    """
    x = np.atleast_2d(x)
    n = x.shape[1]
    zero = np.all(x == 0, axis=0)
    edges = np.diff(np.concatenate(([0], zero.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    limit = min_duration * fs
    segments = []
    cursor = 0
    for s, e in zip(starts, ends):
        if e - s > limit:
            if s > cursor:
                segments.append((cursor, int(s)))
            cursor = int(e)
    if cursor < n:
        segments.append((cursor, n))
    return segments


def design_cheby2_bandpass(
    fs: float = RAW_FS,
    low: float = 1.0,
    high: float = 16.0,
    stop_low: float = 0.5,
    stop_high: float = 20.0,
    attenuation_db: float = 40.0,
    order_per_edge: int = 4,
) -> FilterCoefficients:
    """Chebyshev type-II bandpass as second-order sections.

    The stopband edges are where the response first reaches ``-attenuation_db``.
    """
    nyq = fs / 2
    if not (0 < stop_low < low < high < stop_high < nyq):
        raise FilterDesignError(
            f"infeasible band: need 0 < {stop_low} < {low} < {high} < {stop_high} < {nyq}"
        )
    sos = signal.cheby2(
        order_per_edge, attenuation_db, [stop_low, stop_high], btype="bandpass", fs=fs, output="sos"
    )
    poles = np.abs(np.concatenate([np.roots([1.0, s[4], s[5]]) for s in sos]))
    if np.any(poles >= 1):
        raise FilterDesignError("designed filter is unstable")
    return FilterCoefficients(
        sos=sos,
        passband=(low, high),
        stopband=(stop_low, stop_high),
        attenuation_db=attenuation_db,
        order=2 * order_per_edge,
        fs=fs,
    )


def min_filter_length(coeffs: FilterCoefficients) -> int:
    return 3 * (2 * len(coeffs.sos) + 1)


def filter_forward_backward(x: np.ndarray, coeffs: FilterCoefficients) -> np.ndarray:
    """Zero-phase application of ``coeffs`` along the last axis with mirror padding."""
    x = np.asarray(x, dtype=np.float64)
    padlen = min_filter_length(coeffs)
    if x.shape[-1] <= padlen:
        raise SegmentTooShortError(f"segment of {x.shape[-1]} samples is too short (need > {padlen})")
    return signal.sosfiltfilt(coeffs.sos, x, axis=-1, padtype="even", padlen=padlen)


def downsample(x: np.ndarray, factor: int = DECIMATION) -> np.ndarray:
    """Keep every ``factor``-th sample starting at index 0."""
    return np.asarray(x)[..., ::factor]


def consensus_labels(annotations: np.ndarray) -> np.ndarray:
    """Per-second consensus: 1 if all annotators say seizure, 0 if none, else -1."""
    ann = np.asarray(annotations)
    if ann.ndim != 2:
        raise ValueError("annotations must be (n_annotators, n_seconds)")
    out = np.full(ann.shape[1], DISAGREEMENT, dtype=np.int8)
    out[np.all(ann == 1, axis=0)] = SEIZURE
    out[np.all(ann == 0, axis=0)] = NON_SEIZURE
    return out


def _snap_to_seconds(segments, fs: float) -> list[tuple[int, int]]:
    step = int(fs)
    snapped = []
    for s, e in segments:
        s2 = -(-s // step) * step
        e2 = (e // step) * step
        if e2 > s2:
            snapped.append((s2, e2))
    return snapped


def preprocess_recording(
    raw: RawRecording,
    coeffs: FilterCoefficients | None = None,
    flat_seconds: float = 1.0,
) -> CleanSignal:
    """Montage, flat-line removal, zero-phase bandpass and decimation to 32 Hz.

    Valid segments are shrunk to whole seconds so they line up with the
    per-second annotations; segments too short to filter are dropped.
    """
    if int(raw.fs) != RAW_FS:
        raise ValueError(f"expected {RAW_FS} Hz input, got {raw.fs}")
    coeffs = coeffs or design_cheby2_bandpass(fs=raw.fs)
    bipolar = derive_montage(raw)
    segments = _snap_to_seconds(remove_flat_lines(bipolar, raw.fs, flat_seconds), raw.fs)
    n_seconds = raw.n_samples // RAW_FS
    out = np.zeros((len(CHANNELS), n_seconds * TARGET_FS), dtype=np.float64)
    kept = []
    for s, e in segments:
        if e - s <= min_filter_length(coeffs):
            continue
        filtered = filter_forward_backward(bipolar[:, s:e], coeffs)
        lo, hi = s // DECIMATION, e // DECIMATION
        out[:, lo:hi] = downsample(filtered)
        kept.append((lo, hi))
    ann = raw.annotations[:, :n_seconds]
    return CleanSignal(
        subject_id=raw.subject_id,
        fs=TARGET_FS,
        channels=out,
        valid_segments=kept,
        annotations=consensus_labels(ann),
    )
