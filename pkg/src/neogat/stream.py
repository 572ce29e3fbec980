"""Streaming seizure decisions over a 384-sample ring buffer, and a latency bench."""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from scipy import signal
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .dataset import EPOCH_SAMPLES, EPOCH_SECONDS, normalize_epoch
from .dsp import DECIMATION, TARGET_FS, CleanSignal, FilterCoefficients, design_cheby2_bandpass
from .gat import gat_stack
from .model import Model

log = logging.getLogger(__name__)

REFERENCE_CPU_MS = 62.0
REFERENCE_GPU_MS = 32.0


class RingBuffer:
    """Fixed-capacity multi-channel buffer; ``snapshot`` returns samples oldest first."""

    def __init__(self, n_channels: int = 12, capacity: int = EPOCH_SAMPLES, dtype=np.float64) -> None:
        self.data = np.zeros((n_channels, capacity), dtype=dtype)
        self.capacity = capacity
        self.ptr = 0
        self.count = 0

    @property
    def full(self) -> bool:
        return self.count >= self.capacity

    def reset(self) -> None:
        self.ptr = 0
        self.count = 0

    def extend(self, block: np.ndarray) -> None:
        block = np.asarray(block)
        n = block.shape[1]
        if n >= self.capacity:
            self.data[:] = block[:, -self.capacity :]
            self.ptr = 0
        else:
            end = self.ptr + n
            if end <= self.capacity:
                self.data[:, self.ptr : end] = block
            else:
                split = self.capacity - self.ptr
                self.data[:, self.ptr :] = block[:, :split]
                self.data[:, : end - self.capacity] = block[:, split:]
            self.ptr = end % self.capacity
        self.count = min(self.capacity, self.count + n)

    def snapshot(self) -> np.ndarray:
        start = (self.ptr - self.count) % self.capacity
        return self.data[:, (start + np.arange(self.count)) % self.capacity]


class OnlinePreprocessor:
    """Causal bandpass + decimation for 256 Hz feeds (not zero-phase)."""

    def __init__(self, n_channels: int = 12, coeffs: FilterCoefficients | None = None) -> None:
        self.coeffs = coeffs or design_cheby2_bandpass()
        self.zi = np.zeros((self.coeffs.sos.shape[0], n_channels, 2))
        self.phase = 0

    def __call__(self, block: np.ndarray) -> np.ndarray:
        y, self.zi = signal.sosfilt(self.coeffs.sos, block, axis=-1, zi=self.zi)
        out = y[:, (-self.phase) % DECIMATION :: DECIMATION]
        self.phase = (self.phase + block.shape[1]) % DECIMATION
        return out

    def reset(self) -> None:
        self.zi[:] = 0
        self.phase = 0


@dataclass
class Chunk:
    t: int  # second index of the chunk
    samples: np.ndarray  # (12, fs)
    arrived: float = 0.0


_DONE = object()


def _feeder(feed: Iterable[tuple[int, np.ndarray]], q: queue.Queue) -> None:
    try:
        for t, samples in feed:
            q.put(Chunk(int(t), np.asarray(samples, dtype=np.float64), time.perf_counter()))
    except BaseException as exc:  # surfaced by the consumer
        q.put(exc)
    finally:
        q.put(_DONE)


def stream_infer(
    model: Model,
    feed: Iterable[tuple[int, np.ndarray]],
    threshold: float = 0.5,
    input_fs: int = TARGET_FS,
    queue_size: int = 16,
) -> Iterator[dict]:
    """Yield ``{t, probability, seizure, latency_ms}`` once per second of new data.

    ``feed`` yields ``(second_index, samples)`` with ``samples`` of shape
    ``(12, input_fs)``. A feeder thread fills a bounded queue; this generator
    owns the ring buffer, so every decision sees one consistent snapshot.
    ``t`` in the output is the start second of the 12 s window decided on.
    A non-consecutive second index resets the buffer.
    """
    if input_fs not in (TARGET_FS, TARGET_FS * DECIMATION):
        raise ValueError(f"stream input must be {TARGET_FS} Hz or {TARGET_FS * DECIMATION} Hz")
    online = OnlinePreprocessor() if input_fs != TARGET_FS else None
    ring = RingBuffer()
    q: queue.Queue = queue.Queue(maxsize=queue_size)
    worker = threading.Thread(target=_feeder, args=(feed, q), daemon=True)
    worker.start()
    expected = None
    while True:
        item = q.get()
        if item is _DONE:
            break
        if isinstance(item, BaseException):
            raise item
        chunk: Chunk = item
        if chunk.samples.shape != (ring.data.shape[0], input_fs):
            raise ValueError(f"chunk at t={chunk.t} has shape {chunk.samples.shape}, expected (12, {input_fs})")
        if expected is not None and chunk.t != expected:
            log.warning("discontinuity: expected second %d, got %d; buffer reset", expected, chunk.t)
            ring.reset()
            if online is not None:
                online.reset()
        expected = chunk.t + 1
        block = online(chunk.samples) if online is not None else chunk.samples
        ring.extend(block)
        if not ring.full:
            continue
        epoch = normalize_epoch(ring.snapshot())
        probs, _ = model.classify(epoch[None])
        p = float(probs[0])
        yield {
            "t": chunk.t - EPOCH_SECONDS + 1,
            "probability": p,
            "seizure": p > threshold,
            "latency_ms": 1e3 * (time.perf_counter() - chunk.arrived),
        }
    worker.join()


def replay_feed(clean: CleanSignal) -> Iterator[tuple[int, np.ndarray]]:
    """One-second chunks of an already preprocessed 32 Hz signal."""
    fs = int(clean.fs)
    for t in range(clean.channels.shape[1] // fs):
        yield t, clean.channels[:, t * fs : (t + 1) * fs]


def bench_latency(model: Model, n_iter: int = 100, warmup: int = 10, seed: int = 0, threads: int = 1) -> dict:
    """Single-epoch eval latency, total and split into encoder / GAT / head."""
    x = np.random.default_rng(seed).standard_normal((1, 12, EPOCH_SAMPLES)).astype(model.dtype)
    totals, enc_t, gat_t, head_t = [], [], [], []
    with threadpool_limits(limits=threads), ad.no_grad():
        for i in range(warmup + n_iter):
            t0 = time.perf_counter()
            xt = ad.Tensor(x)
            enc = model.encode(xt)
            t1 = time.perf_counter()
            g = gat_stack(enc, model.gat_layers())
            t2 = time.perf_counter()
            ad.sigmoid(model.head(g))
            t3 = time.perf_counter()
            if i >= warmup:
                totals.append(t3 - t0)
                enc_t.append(t1 - t0)
                gat_t.append(t2 - t1)
                head_t.append(t3 - t2)
    ms = 1e3 * np.array(totals)
    return {
        "n_iter": n_iter,
        "warmup": warmup,
        "threads": threads,
        "median_ms": float(np.median(ms)),
        "p95_ms": float(np.percentile(ms, 95)),
        "mean_ms": float(ms.mean()),
        "min_ms": float(ms.min()),
        "breakdown_median_ms": {
            "encoder": float(1e3 * np.median(enc_t)),
            "gat": float(1e3 * np.median(gat_t)),
            "head": float(1e3 * np.median(head_t)),
        },
        "reference_ms": {"cpu": REFERENCE_CPU_MS, "gpu": REFERENCE_GPU_MS},
        "epoch_seconds": EPOCH_SECONDS,
    }
