"""NSD-RAW: a small binary container for referential EEG plus annotator labels.

Layout (all integers and floats little-endian)::

    offset 0        8 bytes   magic b"NSDRAW01"
    offset 8        uint32    H, length of the JSON header in bytes
    offset 12       H bytes   UTF-8 JSON header:
                              {"subject_id": str, "fs": number,
                               "electrodes": [str, ...], "n_samples": int,
                               "n_annotators": int}
    offset 12+H     float32   payload, electrode-major: E x n_samples values (uV)
    then            uint8     annotations, annotator-major: A x S bytes in {0, 1},
                              S = floor(n_samples / fs)

The file must end exactly after the annotation block.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .dsp import RawRecording

MAGIC = b"NSDRAW01"
PREFIX = len(MAGIC) + 4
REQUIRED_KEYS = ("subject_id", "fs", "electrodes", "n_samples", "n_annotators")


class NsdFormatError(ValueError):
    """Malformed NSD-RAW file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def encode(rec: RawRecording) -> bytes:
    names = list(rec.electrodes)
    n_samples = rec.n_samples
    n_seconds = int(n_samples // rec.fs)
    ann = np.asarray(rec.annotations, dtype=np.uint8)
    if ann.shape[1] != n_seconds:
        raise ValueError(f"annotations cover {ann.shape[1]} s, recording has {n_seconds} s")
    header = {
        "subject_id": rec.subject_id,
        "fs": rec.fs,
        "electrodes": names,
        "n_samples": n_samples,
        "n_annotators": int(ann.shape[0]),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    payload = np.stack([np.asarray(rec.electrodes[n], dtype="<f4") for n in names]).tobytes()
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload + ann.tobytes()


def write(rec: RawRecording, path) -> Path:
    path = Path(path)
    path.write_bytes(encode(rec))
    return path


def parse_header(buf: bytes) -> tuple[dict, int]:
    """Header dict and the offset where the payload starts."""
    if len(buf) < PREFIX:
        raise NsdFormatError("file shorter than the fixed prefix", len(buf))
    if buf[: len(MAGIC)] != MAGIC:
        raise NsdFormatError("bad magic", 0)
    (hlen,) = struct.unpack_from("<I", buf, len(MAGIC))
    end = PREFIX + hlen
    if end > len(buf):
        raise NsdFormatError(f"header length {hlen} runs past end of file", len(MAGIC))
    try:
        header = json.loads(buf[PREFIX:end].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise NsdFormatError("header is not UTF-8", PREFIX + exc.start) from exc
    except json.JSONDecodeError as exc:
        raise NsdFormatError(f"header is not valid JSON: {exc.msg}", PREFIX + exc.pos) from exc
    if not isinstance(header, dict):
        raise NsdFormatError("header must be a JSON object", PREFIX)
    missing = [k for k in REQUIRED_KEYS if k not in header]
    if missing:
        raise NsdFormatError(f"header lacks keys {missing}", PREFIX)
    if not isinstance(header["electrodes"], list) or not header["electrodes"]:
        raise NsdFormatError("header 'electrodes' must be a non-empty list", PREFIX)
    if int(header["n_samples"]) < 0 or float(header["fs"]) <= 0 or int(header["n_annotators"]) < 0:
        raise NsdFormatError("header has a non-positive fs or negative count", PREFIX)
    return header, end


def decode(buf: bytes) -> RawRecording:
    header, off = parse_header(buf)
    n_el = len(header["electrodes"])
    n = int(header["n_samples"])
    n_ann = int(header["n_annotators"])
    n_sec = int(n // float(header["fs"]))
    payload_bytes = n_el * n * 4
    expected = off + payload_bytes + n_ann * n_sec
    if len(buf) != expected:
        raise NsdFormatError(
            f"payload length disagrees with header: file has {len(buf)} bytes, header implies {expected}",
            off,
        )
    data = np.frombuffer(buf, dtype="<f4", count=n_el * n, offset=off).reshape(n_el, n)
    ann = np.frombuffer(buf, dtype=np.uint8, count=n_ann * n_sec, offset=off + payload_bytes).reshape(n_ann, n_sec)
    if np.any(ann > 1):
        bad = int(np.flatnonzero(ann.ravel() > 1)[0])
        raise NsdFormatError("annotation byte outside {0, 1}", off + payload_bytes + bad)
    return RawRecording(
        subject_id=str(header["subject_id"]),
        fs=float(header["fs"]),
        electrodes={name: data[i].astype(np.float64) for i, name in enumerate(header["electrodes"])},
        annotations=ann.copy(),
    )


def read(path) -> RawRecording:
    return decode(Path(path).read_bytes())


def read_dir(directory) -> list[RawRecording]:
    """Every ``*.nsd`` file in ``directory``, sorted by file name."""
    return [read(p) for p in sorted(Path(directory).glob("*.nsd"))]
