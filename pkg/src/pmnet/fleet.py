"""Fleet simulation: devices sensing a ground-truth field on a shared clock."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .device import SAMPLE_PERIOD, Device, OutageSchedule, SensorReading
from .fieldsim import (
    DeploymentEntry,
    GroundTruthField,
    SensorErrorModel,
    WeatherModel,
    sample_sensor,
    truth_series,
    weather_series,
)


def device_rng(seed: int, device_id: int, stream: int) -> np.random.Generator:
    """Independent generator per (run seed, device, purpose)."""
    return np.random.default_rng([seed, device_id, stream])


def sense(fld: GroundTruthField, entry: DeploymentEntry, model: SensorErrorModel,
          weather: WeatherModel, times, seed: int) -> list[SensorReading]:
    """Raw readings a device at ``entry`` produces at each timestamp."""
    pm10, pm25 = truth_series(fld, entry.point, times)
    temp, rh = weather_series(weather, fld.calendar, times, device_rng(seed, entry.device_id, 0))
    rng = device_rng(seed, entry.device_id, 1)
    raw10 = sample_sensor(model, pm10, rh, rng)
    raw25 = sample_sensor(model, pm25, rh, rng)
    return [SensorReading.sensed(t, a, b, c, d)
            for t, a, b, c, d in zip(np.asarray(times).tolist(), raw10.tolist(), raw25.tolist(),
                                     temp.tolist(), rh.tolist())]


@dataclass
class FleetRun:
    devices: dict = field(default_factory=dict)
    frames: int = 0
    rejected: int = 0

    @property
    def sensed(self) -> int:
        return sum(d.sensed for d in self.devices.values())

    @property
    def dropped(self) -> int:
        return sum(d.dropped for d in self.devices.values())

    @property
    def pending(self) -> int:
        return sum(d.stored for d in self.devices.values())


def run_fleet(readings: dict[int, list[SensorReading]], outages: dict[int, OutageSchedule],
              sink: Callable[[bytes], object], capacity: int | None = None,
              period: int = SAMPLE_PERIOD) -> FleetRun:
    """Tick every device through its readings in global time order.

    ``readings`` maps device id to that device's readings on the shared
    ``period`` grid; each emitted frame is handed to ``sink`` immediately.
    """
    run = FleetRun()
    kwargs = {"sample_period": period}
    if capacity is not None:
        kwargs["capacity"] = capacity
    for i in sorted(readings):
        run.devices[i] = Device(i, **kwargs)
    clock: dict[int, list[tuple[int, SensorReading]]] = {}
    for i in sorted(readings):
        for r in readings[i]:
            clock.setdefault(r.created_at, []).append((i, r))
    empty = OutageSchedule()
    for now in sorted(clock):
        for i, r in clock[now]:
            online = outages.get(i, empty).online(now)
            for frame in run.devices[i].tick(now, r, online):
                run.frames += 1
                ack = sink(frame)
                if ack is not None and not getattr(ack, "ok", True):
                    run.rejected += 1
    return run
