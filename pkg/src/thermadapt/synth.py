"""Synthetic 8x8 thermal streams for the eight activities in two rooms.

A person is one or two Gaussian warm blobs over the ambient temperature.
Room geometry changes what the fixed 8x8 grid sees: blob amplitude scales
with (reference height / sensor height)^2 and apparent size with the room
diagonal, and a room may also contain a fixed heat source (radiator) that
appears in every frame. The two domains therefore differ even after
background subtraction removes the ambient offset. Frames are quantized
to float32 so dataset files round-trip bitwise.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .model import ActivityLabel
from .preprocess import RawFrame, SENSOR_MAX_C, SENSOR_MIN_C

REFERENCE_HEIGHT_M = 3.0
REFERENCE_EXTENT_M = math.hypot(3.3, 2.0)

STATIC = "static"
OSCILLATING = "oscillating"
TRANSLATING = "translating"

# Blob centers stay inside this cell range so activity stays in view.
_ANCHOR_LO, _ANCHOR_HI = 2.6, 4.4


@dataclass
class DomainSpec:
    """Room geometry, mounting height, and thermal environment of one scene.

    A room may contain a fixed heat source (radiator, appliance) that shows
    up in every frame regardless of activity; fixture_peak_delta_celsius 0
    means none.
    """

    name: str
    room_length_m: float = 3.3
    room_width_m: float = 2.0
    sensor_height_m: float = 3.0
    ambient_celsius: float = 20.0
    noise_std_celsius: float = 0.10
    fixture_peak_delta_celsius: float = 0.0
    fixture_sigma: float = 1.1
    fixture_row: float = 1.3
    fixture_col: float = 1.3

    def __post_init__(self):
        if self.name not in ("source", "target"):
            raise ConfigError(f"domain name must be source or target, got {self.name!r}")
        if min(self.room_length_m, self.room_width_m, self.sensor_height_m) <= 0:
            raise ConfigError("room dimensions and sensor height must be positive")
        if not SENSOR_MIN_C <= self.ambient_celsius <= SENSOR_MAX_C:
            raise ConfigError(
                f"ambient {self.ambient_celsius} outside sensor range "
                f"[{SENSOR_MIN_C}, {SENSOR_MAX_C}]"
            )
        if self.noise_std_celsius < 0:
            raise ConfigError("noise std must be >= 0")
        if self.fixture_peak_delta_celsius < 0 or self.fixture_sigma <= 0:
            raise ConfigError("fixture peak must be >= 0 and sigma positive")

    @property
    def view_extent_m(self) -> float:
        """Ground extent covered by the grid diagonal-to-diagonal."""
        return math.hypot(self.room_length_m, self.room_width_m)

    @property
    def cells_per_m(self) -> float:
        return 8.0 / self.view_extent_m

    @property
    def blob_gain(self) -> float:
        """Amplitude factor from mounting height (inverse-square)."""
        return (REFERENCE_HEIGHT_M / self.sensor_height_m) ** 2

    @property
    def view_scale(self) -> float:
        """Apparent-size factor relative to the reference room."""
        return REFERENCE_EXTENT_M / self.view_extent_m


SOURCE_DOMAIN = DomainSpec(
    "source", room_length_m=3.3, room_width_m=2.0, sensor_height_m=3.0,
    ambient_celsius=20.0,
)
TARGET_DOMAIN = DomainSpec(
    "target", room_length_m=3.5, room_width_m=2.3, sensor_height_m=2.2,
    ambient_celsius=23.0,
)


@dataclass
class ActivityModel:
    """Blob signature of one activity.

    blob_sigma is the spatial spread in grid cells as seen from the
    reference room; domains rescale it through their view_scale.
    """

    activity: ActivityLabel
    blob_count: int
    blob_sigma: float
    blob_peak_delta_celsius: float
    motion_pattern: str = STATIC
    motion_rate_hz: float = 0.0
    motion_speed_m_s: float = 0.0

    def __post_init__(self):
        if self.activity == ActivityLabel.EMPTY and self.blob_peak_delta_celsius != 0:
            raise ConfigError("empty scene must have zero blob amplitude")
        if self.motion_pattern not in (STATIC, OSCILLATING, TRANSLATING):
            raise ConfigError(f"unknown motion pattern {self.motion_pattern!r}")


# Signatures are graded so neighbours are confusable on purpose (sitting vs
# stooping close; lying wide and cool, standing tight and hot).
ACTIVITY_MODELS: Dict[ActivityLabel, ActivityModel] = {
    ActivityLabel.LYING: ActivityModel(ActivityLabel.LYING, 1, 3.05, 2.4),
    ActivityLabel.SQUATTING: ActivityModel(ActivityLabel.SQUATTING, 1, 1.56, 3.6),
    ActivityLabel.SITTING: ActivityModel(ActivityLabel.SITTING, 1, 1.95, 3.8),
    ActivityLabel.STANDING: ActivityModel(ActivityLabel.STANDING, 1, 1.10, 4.8),
    ActivityLabel.WAVING: ActivityModel(
        ActivityLabel.WAVING, 2, 1.30, 4.4, OSCILLATING, motion_rate_hz=1.0
    ),
    ActivityLabel.WALKING: ActivityModel(
        ActivityLabel.WALKING, 1, 1.43, 4.0, TRANSLATING, motion_speed_m_s=0.9
    ),
    ActivityLabel.STOOPING: ActivityModel(ActivityLabel.STOOPING, 1, 2.31, 3.2),
    ActivityLabel.EMPTY: ActivityModel(ActivityLabel.EMPTY, 0, 1.30, 0.0),
}


@dataclass
class LabeledStream:
    """A continuous frame stream for one activity in one domain."""

    frames: List[RawFrame]
    label: ActivityLabel
    domain_tag: str


def _fold(value: float, lo: float, hi: float) -> float:
    """Reflect an unbounded coordinate into [lo, hi]."""
    span = hi - lo
    if span <= 0:
        return lo
    w = (value - lo) % (2.0 * span)
    return lo + (w if w <= span else 2.0 * span - w)


def _blob_positions(
    domain: DomainSpec,
    model: ActivityModel,
    t: float,
    anchor: Tuple[float, float],
    direction_rad: float,
) -> List[Tuple[float, float, float, float]]:
    """(row, col, sigma_cells, peak) per blob at time t, before domain gain."""
    sigma = model.blob_sigma * domain.view_scale
    if model.blob_count == 0:
        return []
    if model.motion_pattern == STATIC:
        centers = [(anchor[0], anchor[1], sigma, model.blob_peak_delta_celsius)]
    elif model.motion_pattern == TRANSLATING:
        speed_cells = model.motion_speed_m_s * domain.cells_per_m
        r = _fold(anchor[0] + speed_cells * t * math.cos(direction_rad), 1.0, 7.0)
        c = _fold(anchor[1] + speed_cells * t * math.sin(direction_rad), 1.0, 7.0)
        centers = [(r, c, sigma, model.blob_peak_delta_celsius)]
    else:  # oscillating: torso plus an orbiting arm blob
        centers = [(anchor[0], anchor[1], sigma, model.blob_peak_delta_celsius)]
        phase = 2.0 * math.pi * model.motion_rate_hz * t + direction_rad
        arm_radius = 1.0 * domain.cells_per_m
        centers.append(
            (
                anchor[0] + arm_radius * math.cos(phase),
                anchor[1] + arm_radius * math.sin(phase),
                0.55 * sigma,
                0.65 * model.blob_peak_delta_celsius,
            )
        )
    if model.blob_count == 1:
        centers = centers[:1]
    return centers


_ROWS, _COLS = np.meshgrid(np.arange(8.0), np.arange(8.0), indexing="ij")


def generate_frame(
    domain: DomainSpec,
    model: ActivityModel,
    t: float,
    rng: np.random.Generator,
    anchor: Optional[Tuple[float, float]] = None,
    gain_jitter: float = 1.0,
    sigma_jitter: float = 1.0,
    direction_rad: float = 0.0,
    fixture_jitter: float = 1.0,
    fixture_offset: Tuple[float, float] = (0.0, 0.0),
    timestamp_ms: int = 0,
) -> RawFrame:
    """One 8x8 frame at time t seconds; noise consumes one rng draw."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    if anchor is None:
        anchor = (3.5, 3.5)
    temps = np.full((8, 8), domain.ambient_celsius)
    blobs = _blob_positions(domain, model, t, anchor, direction_rad)
    for r, c, sigma, peak in blobs:
        sig = max(sigma * sigma_jitter, 1e-6)
        d2 = (_ROWS - r) ** 2 + (_COLS - c) ** 2
        temps += (domain.blob_gain * gain_jitter * peak) * np.exp(-d2 / (2.0 * sig * sig))
    if domain.fixture_peak_delta_celsius > 0:
        fr = domain.fixture_row + fixture_offset[0]
        fc = domain.fixture_col + fixture_offset[1]
        sig = max(domain.fixture_sigma * domain.view_scale, 1e-6)
        d2 = (_ROWS - fr) ** 2 + (_COLS - fc) ** 2
        temps += (domain.blob_gain * fixture_jitter * domain.fixture_peak_delta_celsius
                  ) * np.exp(-d2 / (2.0 * sig * sig))
    temps += rng.normal(0.0, domain.noise_std_celsius, size=(8, 8))
    temps = np.clip(temps, SENSOR_MIN_C, SENSOR_MAX_C)
    # float32 grid so frames survive dataset storage bit-for-bit
    temps = temps.astype(np.float32).astype(np.float64)
    return RawFrame(temps, timestamp_ms)


def _stream_rng(rng_seed: int, domain: DomainSpec, label: ActivityLabel):
    tag = zlib.crc32(domain.name.encode("utf-8"))
    return np.random.default_rng([int(rng_seed), tag, int(label)])


def generate_stream(
    domain: DomainSpec,
    label: ActivityLabel,
    sample_count: int,
    rng_seed: int,
    frame_rate_hz: float = 20.0,
    frames_per_sample: int = 10,
) -> LabeledStream:
    """A continuous stream yielding sample_count windows after segmentation.

    The subject relocates (new anchor, new jitters) every window, giving
    within-class variety; the stream itself stays continuous in time.
    """
    if sample_count < 0:
        raise ConfigError(f"sample count must be >= 0, got {sample_count}")
    model = ACTIVITY_MODELS[ActivityLabel(label)]
    rng = _stream_rng(rng_seed, domain, label)
    frames: List[RawFrame] = []
    for i in range(sample_count):
        anchor = (
            rng.uniform(_ANCHOR_LO, _ANCHOR_HI),
            rng.uniform(_ANCHOR_LO, _ANCHOR_HI),
        )
        gain_jitter = rng.uniform(0.94, 1.06)
        sigma_jitter = rng.uniform(0.95, 1.05)
        direction = rng.uniform(0.0, 2.0 * math.pi)
        # drawn even without a fixture so both domains share stream structure
        fixture_jitter = rng.uniform(0.90, 1.10)
        fixture_offset = (rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15))
        for k in range(frames_per_sample):
            n = i * frames_per_sample + k
            frames.append(
                generate_frame(
                    domain,
                    model,
                    t=n / frame_rate_hz,
                    rng=rng,
                    anchor=anchor,
                    gain_jitter=gain_jitter,
                    sigma_jitter=sigma_jitter,
                    direction_rad=direction,
                    fixture_jitter=fixture_jitter,
                    fixture_offset=fixture_offset,
                    timestamp_ms=round(n * 1000.0 / frame_rate_hz),
                )
            )
    return LabeledStream(frames, ActivityLabel(label), domain.name)


def generate_dataset(
    domain: DomainSpec,
    per_activity_sample_count: int,
    rng_seed: int,
    frame_rate_hz: float = 20.0,
    frames_per_sample: int = 10,
) -> List[LabeledStream]:
    """One stream per activity; empty list when the count is zero."""
    if per_activity_sample_count < 0:
        raise ConfigError("per-activity sample count must be >= 0")
    if per_activity_sample_count == 0:
        return []
    return [
        generate_stream(
            domain, label, per_activity_sample_count, rng_seed,
            frame_rate_hz=frame_rate_hz, frames_per_sample=frames_per_sample,
        )
        for label in ActivityLabel
    ]
