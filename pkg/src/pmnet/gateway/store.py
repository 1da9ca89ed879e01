"""Per-device channel store with idempotent ingest, aggregation and CSV export."""

from __future__ import annotations

import json
import logging
import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from ..csvio import fmt, iso, parse_time, read_rows, write_rows
from ..device import PAYLOAD_SIZE, FrameError, SensorReading, decode_frame, decode_payload, encode_payload

log = logging.getLogger(__name__)

AGGREGATIONS = {"raw": 0, "10min": 600, "hourly": 3600}
EXPORT_COLUMNS = ["created_at", "pm10", "pm25", "temp", "rh"]


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class Ack:
    ok: bool
    device_id: int | None = None
    accepted: int = 0
    inserted: int = 0
    error: str | None = None


@dataclass(frozen=True)
class QueryRequest:
    device_id: int | None
    start: int
    end: int
    aggregation: str = "raw"

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("query needs from <= to")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


@dataclass(frozen=True)
class Row:
    created_at: int
    count: int
    pm10: float
    pm25: float
    temp: float
    rh: float


class Channel:
    """Append-only readings of one device; sorted lazily when read."""

    def __init__(self, device_id: int, meta: dict | None = None, log_path: Path | None = None):
        self.device_id = device_id
        self.meta = meta or {}
        self.log_path = log_path
        self._readings: list[SensorReading] = []
        self._seen: set[int] = set()
        self._sorted = True
        self.lock = threading.Lock()

    def __len__(self):
        return len(self._readings)

    def append(self, readings, persist: bool = True) -> list[SensorReading]:
        """Append unseen readings; returns the ones actually inserted."""
        new = []
        with self.lock:
            for r in readings:
                if r.created_at in self._seen:
                    continue
                if self._readings and r.created_at < self._readings[-1].created_at:
                    self._sorted = False
                self._seen.add(r.created_at)
                self._readings.append(r)
                new.append(r)
            if persist and new and self.log_path is not None:
                with open(self.log_path, "ab") as fh:
                    fh.write(b"".join(encode_payload(r) for r in new))
        return new

    def _sort(self) -> None:
        if not self._sorted:
            self._readings.sort(key=lambda r: r.created_at)
            self._sorted = True

    def snapshot(self) -> list[SensorReading]:
        with self.lock:
            self._sort()
            return list(self._readings)

    def compact(self, snap_path: Path) -> None:
        """Write the sorted contents to ``snap_path`` and truncate the log."""
        with self.lock:
            self._sort()
            tmp = snap_path.with_name(snap_path.name + ".tmp")
            tmp.write_bytes(b"".join(encode_payload(r) for r in self._readings))
            os.replace(tmp, snap_path)
            if self.log_path is not None:
                self.log_path.write_bytes(b"")


def _mean(values) -> float:
    return math.fsum(values) / len(values)


class Gateway:
    """Ingest endpoint and query backend.

    With ``data_dir`` set, every inserted reading is appended to
    ``<id>.log`` and channels are compacted into ``<id>.snap`` every
    ``snapshot_every`` frames, so a new instance on the same directory
    recovers the same contents.
    """

    def __init__(self, data_dir: str | os.PathLike | None = None, snapshot_every: int = 0):
        self.channels: dict[int, Channel] = {}
        self.errors = 0
        self.frames = 0
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.snapshot_every = snapshot_every
        self._lock = threading.Lock()
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._load()

    def register(self, device_id: int, **meta) -> Channel:
        ch = self._channel(device_id)
        ch.meta.update(meta)
        if self.data_dir is not None:
            self._save_registry()
        return ch

    def _channel(self, device_id: int) -> Channel:
        with self._lock:
            ch = self.channels.get(device_id)
            if ch is None:
                log_path = self.data_dir / f"{device_id}.log" if self.data_dir is not None else None
                ch = self.channels[device_id] = Channel(device_id, log_path=log_path)
            return ch

    def handle_frame(self, frame: bytes) -> Ack:
        try:
            device_id, readings = decode_frame(frame)
        except FrameError as exc:
            with self._lock:
                self.errors += 1
            log.debug("rejected frame: %s", exc)
            return Ack(ok=False, error=exc.reason)
        ch = self._channel(device_id)
        new = ch.append(readings)
        with self._lock:
            self.frames += 1
            due = self.snapshot_every and self.frames % self.snapshot_every == 0
        if due:
            self.snapshot()
        return Ack(ok=True, device_id=device_id, accepted=len(readings), inserted=len(new))

    def total_readings(self) -> int:
        return sum(len(ch) for ch in self.channels.values())

    def device_ids(self) -> list[int]:
        return sorted(self.channels)

    def readings(self, device_id: int) -> list[SensorReading]:
        if device_id not in self.channels:
            raise NotFound(device_id)
        return self.channels[device_id].snapshot()

    # queries

    def query_series(self, req: QueryRequest) -> dict[int, list[Row]]:
        ids = self.device_ids() if req.device_id is None else [req.device_id]
        return {i: self._series(i, req) for i in ids}

    def _series(self, device_id: int, req: QueryRequest) -> list[Row]:
        rows = [r for r in self.readings(device_id) if req.start <= r.created_at <= req.end]
        width = AGGREGATIONS[req.aggregation]
        if not width:
            return [Row(r.created_at, 1, r.pm10, r.pm25, r.temp, r.rh) for r in rows]
        buckets: dict[int, list[SensorReading]] = {}
        for r in rows:
            buckets.setdefault(r.created_at - r.created_at % width, []).append(r)
        return [Row(t, len(b), _mean([r.pm10 for r in b]), _mean([r.pm25 for r in b]),
                    _mean([r.temp for r in b]), _mean([r.rh for r in b]))
                for t, b in sorted(buckets.items())]

    def export_csv(self, device_id: int, dest, start: int | None = None, end: int | None = None) -> int:
        rows = [r for r in self.readings(device_id)
                if (start is None or r.created_at >= start) and (end is None or r.created_at <= end)]
        write_rows(dest, EXPORT_COLUMNS, (reading_cells(r) for r in rows))
        return len(rows)

    # persistence

    def snapshot(self) -> None:
        if self.data_dir is None:
            return
        for device_id, ch in list(self.channels.items()):
            ch.compact(self.data_dir / f"{device_id}.snap")

    def _save_registry(self) -> None:
        reg = {str(i): ch.meta for i, ch in sorted(self.channels.items())}
        tmp = self.data_dir / "devices.json.tmp"
        tmp.write_text(json.dumps(reg, sort_keys=True))
        os.replace(tmp, self.data_dir / "devices.json")

    def _load(self) -> None:
        reg_path = self.data_dir / "devices.json"
        if reg_path.exists():
            for key, meta in json.loads(reg_path.read_text()).items():
                self._channel(int(key)).meta.update(meta)
        ids = {int(p.name.split(".")[0]) for p in self.data_dir.iterdir()
               if p.suffix in (".snap", ".log") and p.name.split(".")[0].isdigit()}
        for device_id in sorted(ids):
            ch = self._channel(device_id)
            for suffix in ("snap", "log"):
                path = self.data_dir / f"{device_id}.{suffix}"
                if path.exists():
                    blob = path.read_bytes()
                    usable = len(blob) - len(blob) % PAYLOAD_SIZE  # ignore a torn tail write
                    ch.append((decode_payload(blob, off) for off in range(0, usable, PAYLOAD_SIZE)),
                              persist=False)


def reading_cells(r: SensorReading) -> tuple:
    return (iso(r.created_at), fmt(r.pm10), fmt(r.pm25), fmt(r.temp), fmt(r.rh))


def import_csv(source, name: str = "input") -> list[SensorReading]:
    """Inverse of :meth:`Gateway.export_csv`."""
    rows = read_rows(source, tuple(EXPORT_COLUMNS), name)
    return [SensorReading(parse_time(r["created_at"]), float(r["pm10"]), float(r["pm25"]),
                          float(r["temp"]), float(r["rh"])) for r in rows]
