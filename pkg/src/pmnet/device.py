"""Device firmware model: periodic sensing, offline FIFO cache, framed uplink.

Wire layout (little-endian, see docs/wire.md)::

    payload  = u64 created_at | f32 pm10 | f32 pm25 | f32 temp | f32 rh   (24 B)
    frame    = A1 51 | u8 version | u16 device_id | u16 count | payloads | u32 crc32
    stream   = u32 frame_length | frame, repeated
"""

from __future__ import annotations

import struct
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

PAYLOAD = struct.Struct("<Qffff")
HEADER = struct.Struct("<2sBHH")
CRC = struct.Struct("<I")
LENGTH_PREFIX = struct.Struct("<I")

MAGIC = b"\xa1\x51"
VERSION = 0x01
PAYLOAD_SIZE = PAYLOAD.size  # 24
HEADER_SIZE = HEADER.size  # 7
MAX_READINGS_PER_FRAME = 2000
MAX_FRAME_SIZE = HEADER_SIZE + MAX_READINGS_PER_FRAME * PAYLOAD_SIZE + CRC.size

BUFFER_CAPACITY = 20_000
SAMPLE_PERIOD = 30


class FrameError(ValueError):
    """A frame failed to decode; ``reason`` is a short machine-readable tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


def f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True, order=True)
class SensorReading:
    created_at: int
    pm10: float
    pm25: float
    temp: float
    rh: float

    @classmethod
    def sensed(cls, created_at, pm10, pm25, temp, rh) -> "SensorReading":
        """Reading as the firmware holds it: float32 fields, PM and RH within range."""
        return cls(int(created_at), f32(min(max(pm10, 0.0), 999.9)), f32(min(max(pm25, 0.0), 999.9)),
                   f32(temp), f32(min(max(rh, 0.0), 100.0)))


def encode_payload(r: SensorReading) -> bytes:
    return PAYLOAD.pack(r.created_at, r.pm10, r.pm25, r.temp, r.rh)


def decode_payload(buf: bytes, offset: int = 0) -> SensorReading:
    return SensorReading(*PAYLOAD.unpack_from(buf, offset))


def encode_frame(device_id: int, readings) -> bytes:
    n = len(readings)
    if not 1 <= n <= MAX_READINGS_PER_FRAME:
        raise ValueError(f"frame must hold 1..{MAX_READINGS_PER_FRAME} readings, got {n}")
    if not 0 <= device_id <= 0xFFFF:
        raise ValueError(f"device id {device_id} does not fit 16 bits")
    body = HEADER.pack(MAGIC, VERSION, device_id, n) + b"".join(encode_payload(r) for r in readings)
    return body + CRC.pack(zlib.crc32(body))


def decode_frame(frame: bytes) -> tuple[int, list[SensorReading]]:
    if len(frame) < HEADER_SIZE + CRC.size:
        raise FrameError("truncated", f"{len(frame)} bytes")
    magic, version, device_id, count = HEADER.unpack_from(frame)
    if magic != MAGIC:
        raise FrameError("bad_magic", magic.hex())
    if version != VERSION:
        raise FrameError("bad_version", str(version))
    expected = HEADER_SIZE + count * PAYLOAD_SIZE + CRC.size
    if count == 0 or count > MAX_READINGS_PER_FRAME or len(frame) != expected:
        raise FrameError("bad_length", f"count={count} len={len(frame)}")
    (crc,) = CRC.unpack_from(frame, expected - CRC.size)
    if crc != zlib.crc32(frame[:expected - CRC.size]):
        raise FrameError("bad_crc")
    readings = [decode_payload(frame, HEADER_SIZE + i * PAYLOAD_SIZE) for i in range(count)]
    return device_id, readings


def chunk_frames(device_id: int, readings) -> list[bytes]:
    return [encode_frame(device_id, readings[i:i + MAX_READINGS_PER_FRAME])
            for i in range(0, len(readings), MAX_READINGS_PER_FRAME)]


def length_prefixed(frame: bytes) -> bytes:
    return LENGTH_PREFIX.pack(len(frame)) + frame


class StreamDecoder:
    """Incremental splitter for a length-prefixed frame stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf += data
        frames = []
        while len(self._buf) >= LENGTH_PREFIX.size:
            (n,) = LENGTH_PREFIX.unpack_from(self._buf)
            if n > MAX_FRAME_SIZE:
                raise FrameError("oversize", str(n))
            if len(self._buf) < LENGTH_PREFIX.size + n:
                break
            frames.append(bytes(self._buf[LENGTH_PREFIX.size:LENGTH_PREFIX.size + n]))
            del self._buf[:LENGTH_PREFIX.size + n]
        return frames


@dataclass(frozen=True)
class OutageSchedule:
    """Half-open ``[start, end)`` intervals during which the device is offline."""

    intervals: tuple = ()

    def __post_init__(self):
        prev_end = None
        for start, end in self.intervals:
            if not start < end:
                raise ValueError(f"empty outage interval ({start}, {end})")
            if prev_end is not None and start < prev_end:
                raise ValueError("outage intervals must be sorted and non-overlapping")
            prev_end = end

    def online(self, t: float) -> bool:
        return not any(s <= t < e for s, e in self.intervals)

    def mask(self, times) -> np.ndarray:
        t = np.asarray(times)
        on = np.ones(t.shape, dtype=bool)
        for s, e in self.intervals:
            on &= ~((t >= s) & (t < e))
        return on

    @classmethod
    def random(cls, rng: np.random.Generator, start: int, end: int, count: int,
               max_samples: int, period: int = SAMPLE_PERIOD) -> "OutageSchedule":
        """Up to ``count`` sample-aligned outages, each shorter than ``max_samples`` ticks,
        all ending at least one tick before ``end`` so the backlog gets flushed."""
        n_ticks = (end - start) // period
        if count <= 0 or n_ticks < 3:
            return cls(())
        slots = np.array_split(np.arange(n_ticks - 1), count)
        out = []
        for slot in slots:
            if len(slot) < 2:
                continue
            length = int(rng.integers(1, min(max_samples, len(slot)) + 1))
            first = int(rng.integers(slot[0], slot[-1] - length + 2))
            out.append((start + first * period, start + (first + length) * period))
        return cls(tuple(out))


@dataclass
class Device:
    """Firmware state of one device; mutated only by :meth:`tick`."""

    device_id: int
    capacity: int = BUFFER_CAPACITY
    sample_period: int = SAMPLE_PERIOD
    buffer: deque = field(default_factory=deque)
    dropped: int = 0
    sensed: int = 0
    last_tick: int | None = None

    @property
    def stored(self) -> int:
        return len(self.buffer)

    def tick(self, now: int, reading: SensorReading, online: bool) -> list[bytes]:
        """Advance one sensing cycle and return the frames put on the wire."""
        if now % self.sample_period:
            raise ValueError(f"tick at {now} not aligned to {self.sample_period} s")
        if reading.created_at != now:
            raise ValueError("reading timestamp must equal the tick time")
        if self.last_tick is not None and now <= self.last_tick:
            raise ValueError("ticks must be strictly increasing")
        self.last_tick = now
        self.sensed += 1
        if not online:
            if len(self.buffer) >= self.capacity:
                self.buffer.popleft()
                self.dropped += 1
            self.buffer.append(reading)
            return []
        if not self.buffer:
            return [encode_frame(self.device_id, [reading])]
        backlog = list(self.buffer)
        backlog.append(reading)
        self.buffer.clear()
        return chunk_frames(self.device_id, backlog)
