"""Dataset container files and heatmap export.

Layout: magic "THDS", u32 version, u32 header length, UTF-8 JSON header
(kind, frame rate, domain, class table, record count), then fixed-size
records. Frame records store 64 float32 cells plus a u64 timestamp and a
label byte; sample records store 640 float64 values, label and domain
bytes, and the 10 source-frame timestamps. Round-trips are bitwise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DatasetFormatError
from .model import CLASS_NAMES
from .preprocess import RawFrame, SampleTensor

DATASET_MAGIC = b"THDS"
DATASET_VERSION = 1
KIND_FRAMES = "frames"
KIND_SAMPLES = "samples"

_NO_LABEL = 255
_FRAME_RECORD = struct.Struct("<QB")  # timestamp, label; then 64 f4 cells
_FRAME_BYTES = _FRAME_RECORD.size + 64 * 4
_SAMPLE_HEAD = struct.Struct("<BB" + "10q")  # label, domain, timestamps
_SAMPLE_BYTES = _SAMPLE_HEAD.size + 640 * 8

_DOMAIN_CODE = {"source": 0, "target": 1}
_DOMAIN_NAME = {v: k for k, v in _DOMAIN_CODE.items()}


@dataclass
class DatasetContent:
    kind: str
    frame_rate_hz: float
    domain: str
    class_names: Tuple[str, ...]
    frames: Optional[List[Tuple[RawFrame, Optional[int]]]] = None
    samples: Optional[List[SampleTensor]] = None
    extra: dict = field(default_factory=dict)


def _write(path, kind: str, frame_rate_hz: float, domain: str, count: int,
           body: bytes, extra: Optional[dict] = None) -> None:
    header = {
        "format_version": DATASET_VERSION,
        "kind": kind,
        "frame_rate_hz": float(frame_rate_hz),
        "domain": domain,
        "class_names": list(CLASS_NAMES),
        "count": count,
        "extra": extra or {},
    }
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, len(blob)))
        fh.write(blob)
        fh.write(body)


def write_frames(
    path,
    frames: Sequence[Tuple[RawFrame, Optional[int]]],
    frame_rate_hz: float = 20.0,
    domain: str = "source",
    extra: Optional[dict] = None,
) -> None:
    """Store (frame, label-or-None) pairs; cells are float32."""
    parts = []
    for frame, label in frames:
        code = _NO_LABEL if label is None else int(label)
        parts.append(_FRAME_RECORD.pack(frame.timestamp_ms, code))
        parts.append(np.ascontiguousarray(frame.temperatures, dtype="<f4").tobytes())
    _write(path, KIND_FRAMES, frame_rate_hz, domain, len(frames), b"".join(parts), extra)


def write_samples(
    path,
    samples: Sequence[SampleTensor],
    frame_rate_hz: float = 20.0,
    domain: str = "source",
    extra: Optional[dict] = None,
) -> None:
    parts = []
    for s in samples:
        code = _NO_LABEL if s.label is None else int(s.label)
        stamps = list(s.source_timestamps) or [0] * 10
        if len(stamps) != 10:
            raise DatasetFormatError(f"sample carries {len(stamps)} timestamps, need 10")
        parts.append(_SAMPLE_HEAD.pack(code, _DOMAIN_CODE[s.domain_tag], *stamps))
        parts.append(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
    _write(path, KIND_SAMPLES, frame_rate_hz, domain, len(samples), b"".join(parts), extra)


def read_dataset(path) -> DatasetContent:
    """Parse either record kind; rejects bad magic, version, or truncation."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != DATASET_MAGIC:
        raise DatasetFormatError("not a dataset file (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    if len(raw) < 12 + header_len:
        raise DatasetFormatError("truncated dataset header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"corrupt dataset header: {exc}") from None
    kind = header.get("kind")
    count = header.get("count")
    if kind not in (KIND_FRAMES, KIND_SAMPLES) or not isinstance(count, int):
        raise DatasetFormatError(f"malformed header: kind={kind!r}")
    content = DatasetContent(
        kind=kind,
        frame_rate_hz=float(header.get("frame_rate_hz", 20.0)),
        domain=str(header.get("domain", "source")),
        class_names=tuple(header.get("class_names", CLASS_NAMES)),
        extra=header.get("extra", {}),
    )
    body = raw[12 + header_len :]
    record = _FRAME_BYTES if kind == KIND_FRAMES else _SAMPLE_BYTES
    if len(body) != count * record:
        raise DatasetFormatError(
            f"body holds {len(body)} bytes, expected {count} x {record}"
        )
    if kind == KIND_FRAMES:
        frames: List[Tuple[RawFrame, Optional[int]]] = []
        for i in range(count):
            chunk = body[i * record : (i + 1) * record]
            ts, code = _FRAME_RECORD.unpack(chunk[: _FRAME_RECORD.size])
            cells = np.frombuffer(chunk[_FRAME_RECORD.size :], dtype="<f4")
            temps = cells.astype(np.float64).reshape(8, 8)
            frames.append((RawFrame(temps, ts), None if code == _NO_LABEL else int(code)))
        content.frames = frames
    else:
        samples: List[SampleTensor] = []
        for i in range(count):
            chunk = body[i * record : (i + 1) * record]
            head = _SAMPLE_HEAD.unpack(chunk[: _SAMPLE_HEAD.size])
            code, domain_code, stamps = head[0], head[1], head[2:]
            if domain_code not in _DOMAIN_NAME:
                raise DatasetFormatError(f"unknown domain code {domain_code}")
            values = np.frombuffer(chunk[_SAMPLE_HEAD.size :], dtype="<f8")
            samples.append(
                SampleTensor(
                    values.astype(np.float64).reshape(1, 20, 32),
                    source_timestamps=tuple(int(t) for t in stamps),
                    label=None if code == _NO_LABEL else int(code),
                    domain_tag=_DOMAIN_NAME[domain_code],
                )
            )
        content.samples = samples
    return content


# ---------------------------------------------------------------------------
# Heatmap export.


def emit_heatmap(obj, path) -> Tuple[str, str]:
    """Write a binary 8-bit graymap plus a delimited-text twin.

    Accepts a RawFrame, a SampleTensor, or any 2-D array. Values are min-max
    normalized to 0..255; a constant input maps to mid-gray (128).
    Returns (graymap_path, text_path).
    """
    if isinstance(obj, RawFrame):
        grid = obj.temperatures
    elif isinstance(obj, SampleTensor):
        grid = obj.values[0]
    else:
        grid = np.asarray(obj, dtype=np.float64)
    if grid.ndim != 2:
        raise DatasetFormatError(f"heatmap input must be 2-d, got shape {grid.shape}")
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        pixels = np.round((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.full(grid.shape, 128, dtype=np.uint8)
    h, w = grid.shape
    pgm_path = str(path)
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    txt_path = pgm_path + ".txt"
    with open(txt_path, "w", encoding="utf-8") as fh:
        for row in grid:
            fh.write("\t".join(f"{v:.6g}" for v in row) + "\n")
    return pgm_path, txt_path
