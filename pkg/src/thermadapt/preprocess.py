"""Raw frame streams to training samples.

Pipeline order: per-frame background subtraction, causal per-pixel low-pass
filtering over time, segmentation into fixed-length windows, and the
10x8x8 -> 1x20x32 reshape. Subtraction runs first so the filter smooths
motion signal rather than ambient offset steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal as _signal

from .errors import ConfigError, ShapeError
from .model import ActivityLabel

FRAME_SHAPE = (8, 8)
SENSOR_MIN_C = -20.0
SENSOR_MAX_C = 80.0
SAMPLE_FRAMES = 10


@dataclass
class RawFrame:
    """One 8x8 temperature grid in deg C with a stream-relative timestamp."""

    temperatures: np.ndarray
    timestamp_ms: int = 0

    def __post_init__(self):
        self.temperatures = np.asarray(self.temperatures, dtype=np.float64)
        if self.temperatures.shape != FRAME_SHAPE:
            raise ShapeError(
                f"frame must be {FRAME_SHAPE}, got {self.temperatures.shape}"
            )
        self.timestamp_ms = int(self.timestamp_ms)


@dataclass
class FilterSpec:
    """Low-pass design parameters: order, cutoff, and sampling rate in Hz."""

    order: int = 2
    cutoff_hz: float = 2.0
    sample_rate_hz: float = 20.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ConfigError(f"filter order must be a positive integer, got {self.order}")
        self.order = int(self.order)
        if not 0.0 < self.cutoff_hz < self.sample_rate_hz / 2.0:
            raise ConfigError(
                f"cutoff {self.cutoff_hz} Hz must lie in (0, {self.sample_rate_hz / 2.0}) "
                f"for a {self.sample_rate_hz} Hz stream"
            )

    def coefficients(self) -> Tuple[np.ndarray, np.ndarray]:
        """Transfer-function (b, a) for the digital low-pass."""
        return _signal.butter(
            self.order, self.cutoff_hz, btype="low", fs=self.sample_rate_hz
        )


@dataclass
class SampleTensor:
    """A 1x20x32 block built from 10 consecutive processed frames."""

    values: np.ndarray
    source_timestamps: Tuple[int, ...] = ()
    label: Optional[ActivityLabel] = None
    domain_tag: str = "source"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (1, 20, 32):
            raise ShapeError(f"sample must be (1, 20, 32), got {self.values.shape}")
        self.source_timestamps = tuple(int(t) for t in self.source_timestamps)
        if self.label is not None:
            self.label = ActivityLabel(self.label)
        if self.domain_tag not in ("source", "target"):
            raise ConfigError(f"domain_tag must be source or target, got {self.domain_tag!r}")


def background_subtract(frame: RawFrame) -> RawFrame:
    """Subtract the frame minimum; output minimum is exactly 0."""
    t = frame.temperatures
    return RawFrame(t - t.min(), frame.timestamp_ms)


def butterworth_filter(pixel_series: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Causal low-pass along axis 0, applied independently per trailing cell.

    The filter state is initialized as if the first value had been held
    forever (step-matched), so a constant series passes through unchanged.
    """
    series = np.asarray(pixel_series, dtype=np.float64)
    if series.ndim < 1 or series.shape[0] < 1:
        raise ShapeError("series must have at least one step along axis 0")
    b, a = spec.coefficients()
    zi = _signal.lfilter_zi(b, a)
    zi = zi.reshape(zi.shape + (1,) * (series.ndim - 1)) * series[0]
    out, _ = _signal.lfilter(b, a, series, axis=0, zi=zi)
    return out


def segment(stream: Sequence[RawFrame], m: int = SAMPLE_FRAMES) -> List[List[RawFrame]]:
    """Consecutive non-overlapping windows of m frames; the tail is dropped."""
    if m < 1:
        raise ConfigError(f"window length must be >= 1, got {m}")
    frames = list(stream)
    return [frames[i * m : (i + 1) * m] for i in range(len(frames) // m)]


def reshape_sample(
    window: Sequence[RawFrame],
    label: Optional[ActivityLabel] = None,
    domain_tag: str = "source",
) -> SampleTensor:
    """Pack 10 frames into 1x20x32; frame k fills output rows 2k and 2k+1.

    Cell (r, c) of frame k, flat index f = 8r + c, lands at
    (2k + f // 32, f mod 32). The map is bijective.
    """
    frames = list(window)
    if len(frames) != SAMPLE_FRAMES:
        raise ShapeError(f"reshape needs exactly {SAMPLE_FRAMES} frames, got {len(frames)}")
    stacked = np.stack([f.temperatures for f in frames])  # (10, 8, 8)
    values = stacked.reshape(20, 32)[None]
    return SampleTensor(
        values,
        source_timestamps=tuple(f.timestamp_ms for f in frames),
        label=label,
        domain_tag=domain_tag,
    )


def unshape_sample(sample: SampleTensor) -> np.ndarray:
    """(10, 8, 8) view of a sample's values: the inverse of reshape_sample."""
    return sample.values.reshape(10, 8, 8)


def preprocess_stream(
    stream: Sequence[RawFrame],
    spec: Optional[FilterSpec] = None,
    m: int = SAMPLE_FRAMES,
    label: Optional[ActivityLabel] = None,
    domain_tag: str = "source",
) -> List[SampleTensor]:
    """Full pipeline: subtract, filter over time, segment, reshape."""
    frames = list(stream)
    if not frames:
        return []
    if spec is None:
        spec = FilterSpec()
    if m != SAMPLE_FRAMES:
        raise ConfigError(f"sample reshape is fixed at {SAMPLE_FRAMES} frames, got m={m}")
    subtracted = np.stack([f.temperatures - f.temperatures.min() for f in frames])
    filtered = butterworth_filter(subtracted, spec)
    out: List[SampleTensor] = []
    for start in range(0, (len(frames) // m) * m, m):
        chunk = [
            RawFrame(filtered[start + k], frames[start + k].timestamp_ms)
            for k in range(m)
        ]
        out.append(reshape_sample(chunk, label=label, domain_tag=domain_tag))
    return out
