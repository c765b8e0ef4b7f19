"""Sensor wire format and UDP ingestion.

A datagram is 64 little-endian int16 cell temperatures in quarter-degree
units, row-major (128 bytes), optionally followed by a little-endian u64
millisecond timestamp (136 bytes). Quarter-degree values round-trip
exactly. Malformed datagrams are counted and skipped, never fatal.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import WireFormatError
from .preprocess import RawFrame, SENSOR_MAX_C, SENSOR_MIN_C

logger = logging.getLogger(__name__)

CELL_UNIT_C = 0.25
PAYLOAD_PLAIN = 128
PAYLOAD_STAMPED = 136


def encode_wire_frame(frame: RawFrame, include_timestamp: bool = False) -> bytes:
    """Temperatures to quarter-degree int16 payload (+ optional timestamp)."""
    t = frame.temperatures
    if t.min() < SENSOR_MIN_C or t.max() > SENSOR_MAX_C:
        raise WireFormatError(
            f"temperatures outside sensor range [{SENSOR_MIN_C}, {SENSOR_MAX_C}]"
        )
    quarters = np.round(t / CELL_UNIT_C).astype("<i2")
    payload = quarters.tobytes()
    if include_timestamp:
        payload += struct.pack("<Q", frame.timestamp_ms)
    return payload


def decode_wire_frame(payload: bytes, receive_timestamp_ms: int = 0) -> RawFrame:
    """Parse one datagram; 136-byte variant carries its own timestamp."""
    n = len(payload)
    if n not in (PAYLOAD_PLAIN, PAYLOAD_STAMPED):
        raise WireFormatError(
            f"payload must be {PAYLOAD_PLAIN} or {PAYLOAD_STAMPED} bytes, got {n}"
        )
    values = np.frombuffer(payload[:PAYLOAD_PLAIN], dtype="<i2").astype(np.float64)
    temps = (values * CELL_UNIT_C).reshape(8, 8)
    if temps.min() < SENSOR_MIN_C or temps.max() > SENSOR_MAX_C:
        raise WireFormatError("decoded temperatures outside sensor range")
    if n == PAYLOAD_STAMPED:
        (ts,) = struct.unpack("<Q", payload[PAYLOAD_PLAIN:])
    else:
        ts = receive_timestamp_ms
    return RawFrame(temps, ts)


class FrameQueue:
    """Bounded handoff buffer; when full, the oldest frame is dropped."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self.dropped = 0
        self._items: deque = deque()
        self._lock = threading.Lock()

    def push(self, frame: RawFrame) -> None:
        with self._lock:
            if len(self._items) >= self.capacity:
                self._items.popleft()
                self.dropped += 1
            self._items.append(frame)

    def pop(self) -> Optional[RawFrame]:
        with self._lock:
            return self._items.popleft() if self._items else None

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


@dataclass
class ListenStats:
    received: int = 0
    rejected: int = 0


class UdpListener:
    """Binds immediately (so port 0 resolves); run() decodes datagrams."""

    def __init__(self, port: int, host: str = "127.0.0.1", timeout_s: float = 0.25):
        self.socket = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.socket.bind((host, port))
        self.socket.settimeout(timeout_s)
        self.port = self.socket.getsockname()[1]
        self.stats = ListenStats()
        self.stop_event = threading.Event()

    def stop(self) -> None:
        self.stop_event.set()

    def close(self) -> None:
        self.socket.close()

    def run(
        self,
        on_frame: Callable[[RawFrame], None],
        max_frames: Optional[int] = None,
        duration_s: Optional[float] = None,
    ) -> ListenStats:
        """Receive until stopped, max_frames reached, or duration elapsed."""
        t0 = time.monotonic()
        deadline = t0 + duration_s if duration_s is not None else None
        try:
            while not self.stop_event.is_set():
                if max_frames is not None and self.stats.received >= max_frames:
                    break
                if deadline is not None and time.monotonic() >= deadline:
                    break
                try:
                    payload, _ = self.socket.recvfrom(4096)
                except socket.timeout:
                    continue
                stamp = int((time.monotonic() - t0) * 1000.0)
                try:
                    frame = decode_wire_frame(payload, receive_timestamp_ms=stamp)
                except WireFormatError as exc:
                    self.stats.rejected += 1
                    logger.debug("rejected datagram: %s", exc)
                    continue
                self.stats.received += 1
                on_frame(frame)
        finally:
            self.close()
        return self.stats


def udp_listen(
    port: int,
    on_frame: Callable[[RawFrame], None],
    host: str = "127.0.0.1",
    max_frames: Optional[int] = None,
    duration_s: Optional[float] = None,
) -> ListenStats:
    """Convenience wrapper: bind, receive, and return counters."""
    listener = UdpListener(port, host=host)
    return listener.run(on_frame, max_frames=max_frames, duration_s=duration_s)
