"""Synthetic ground truth: PM fields, deployments, weather and sensor readings.

Everything here is deterministic given its seeds so that downstream stages
can be checked against the exact field that produced their input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .csvio import fmt, iso, write_rows
from .geo import M_PER_DEG, BBox, DomainError, GeoPoint, cell_centers, haversine, local_xy
from .seasons import SEASONS, ConfigError, SeasonCalendar

SENSOR_MIN = 0.0
SENSOR_MAX = 999.9
RH_UNRELIABLE = 80.0
LOCATION_TYPES = ("L1", "L2", "L3", "L4")


@dataclass(frozen=True)
class PlumeEvent:
    center: GeoPoint
    sigma: float
    peak: float
    start: float
    peak_time: float
    end: float

    def __post_init__(self):
        if not self.start < self.peak_time < self.end:
            raise ConfigError("plume event needs start < peak_time < end")
        if self.sigma <= 0 or self.peak < 0:
            raise ConfigError("plume event needs sigma > 0 and peak >= 0")

    def ramp(self, t):
        """Temporal weight in [0, 1]: linear up to the apex, linear back down."""
        t = np.asarray(t, dtype=float)
        up = (t - self.start) / (self.peak_time - self.start)
        down = (self.end - t) / (self.end - self.peak_time)
        r = np.where(t <= self.peak_time, up, down)
        return np.where((t >= self.start) & (t <= self.end), r, 0.0)

    def max_slope(self) -> float:
        return self.peak / min(self.peak_time - self.start, self.end - self.peak_time)


@dataclass(frozen=True)
class Texture:
    """Spatio-temporal random Fourier features with a Gaussian covariance.

    The covariance between two points is approximately
    ``amplitude**2 * exp(-d**2 / (2 L**2)) * exp(-dt**2 / (2 T**2))``.
    """

    length_scale: float
    amplitude: float
    seed: int = 0
    time_scale: float = 3 * 3600.0
    n_features: int = 192

    def __post_init__(self):
        if self.length_scale <= 0 or self.time_scale <= 0:
            raise ConfigError("texture scales must be > 0")
        if self.amplitude < 0:
            raise ConfigError("texture amplitude must be >= 0")

    @cached_property
    def _features(self):
        rng = np.random.default_rng(self.seed)
        k = self.n_features
        wx = rng.normal(0.0, 1.0 / self.length_scale, k)
        wy = rng.normal(0.0, 1.0 / self.length_scale, k)
        nu = rng.normal(0.0, 1.0 / self.time_scale, k)
        phi = rng.uniform(0.0, 2 * np.pi, k)
        return wx, wy, nu, phi

    def evaluate(self, x: float, y: float, times) -> np.ndarray:
        wx, wy, nu, phi = self._features
        t = np.asarray(times, dtype=float)
        phase = (wx * x + wy * y + phi)[None, :] + t[:, None] * nu[None, :]
        return self.amplitude * math.sqrt(2.0 / self.n_features) * np.cos(phase).sum(axis=1)

    def max_slope(self) -> float:
        nu = self._features[2]
        return self.amplitude * math.sqrt(2.0 / self.n_features) * float(np.abs(nu).sum())


@dataclass(frozen=True)
class GroundTruthField:
    region: BBox
    baseline: dict
    diurnal: tuple = ()
    events: tuple = ()
    texture: Texture | None = None
    pm25_ratio: float = 0.55
    pm25_texture: Texture | None = None
    calendar: SeasonCalendar = field(default_factory=SeasonCalendar)
    utc_offset_h: float = 0.0

    def __post_init__(self):
        for s in SEASONS:
            if s not in self.baseline:
                raise ConfigError(f"baseline missing season {s!r}")
            if self.baseline[s] < 0:
                raise ConfigError("baselines must be >= 0")
        for _, amp in self.diurnal:
            if amp < 0:
                raise ConfigError("diurnal amplitudes must be >= 0")
        if not 0 < self.pm25_ratio <= 1:
            raise ConfigError("pm25_ratio must be in (0, 1]")

    def diurnal_at(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        hour = np.mod(t / 3600.0 + self.utc_offset_h, 24.0)
        out = np.zeros_like(t)
        for k, (phase, amp) in enumerate(self.diurnal, start=1):
            out = out + amp * np.cos(2 * np.pi * k * (hour - phase) / 24.0)
        return out

    def max_rate(self) -> float:
        """Upper bound on |d pm10 / dt| (per second) away from season boundaries."""
        rate = sum(e.max_slope() for e in self.events)
        rate += sum(amp * 2 * np.pi * k / 86400.0 for k, (_, amp) in enumerate(self.diurnal, start=1))
        if self.texture is not None:
            rate += self.texture.max_slope()
        return float(rate)


def truth_series(fld: GroundTruthField, loc: GeoPoint, times) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (pm10, pm25) at ``loc`` for every timestamp in ``times``.

    The seasonal baseline switches at month boundaries of the field's calendar.
    """
    if not fld.region.contains(loc):
        raise DomainError(f"{loc} outside field region")
    t = np.asarray(times, dtype=float)
    seasons = fld.calendar.seasons_of(t.astype("int64"))
    base = np.array([fld.baseline[s] for s in seasons], dtype=float)
    pm10 = base + fld.diurnal_at(t)
    for ev in fld.events:
        d = haversine(loc, ev.center)
        pm10 = pm10 + ev.peak * math.exp(-0.5 * (d / ev.sigma) ** 2) * ev.ramp(t)
    x, y = local_xy(fld.region.sw, loc.lat, loc.lon)
    if fld.texture is not None and fld.texture.amplitude > 0:
        pm10 = pm10 + fld.texture.evaluate(x, y, t)
    pm10 = np.maximum(pm10, 0.0)
    pm25 = fld.pm25_ratio * pm10
    if fld.pm25_texture is not None and fld.pm25_texture.amplitude > 0:
        pm25 = pm25 + fld.pm25_texture.evaluate(x, y, t)
    pm25 = np.clip(pm25, 0.0, pm10)
    return pm10, pm25


def truth_at(fld: GroundTruthField, loc: GeoPoint, t: float) -> tuple[float, float]:
    pm10, pm25 = truth_series(fld, loc, [t])
    return float(pm10[0]), float(pm25[0])


@dataclass(frozen=True)
class SensorErrorModel:
    alpha: float = 1.0
    beta: float = 0.0
    noise_sigma: float = 0.0
    rh_inflation: float = 1.0
    lo: float = SENSOR_MIN
    hi: float = SENSOR_MAX

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.rh_inflation < 1:
            raise ConfigError("rh_inflation must be >= 1")


def sample_sensor(model: SensorErrorModel, truth, rh, rng: np.random.Generator):
    """Raw low-cost sensor output for true concentration(s) ``truth``.

    Accepts scalars or equal-length arrays; returns the same shape.
    """
    truth_a = np.asarray(truth, dtype=float)
    rh_a = np.broadcast_to(np.asarray(rh, dtype=float), truth_a.shape)
    raw = model.alpha * truth_a + model.beta
    if model.noise_sigma > 0:
        raw = raw + rng.normal(0.0, model.noise_sigma, truth_a.shape)
    raw = np.where(rh_a > RH_UNRELIABLE, raw * model.rh_inflation, raw)
    raw = np.clip(raw, model.lo, model.hi)
    return float(raw) if raw.ndim == 0 else raw


def random_error_models(ids, rng: np.random.Generator, alpha=(0.6, 1.6), beta=(-10.0, 20.0),
                        noise_sigma=2.0, rh_inflation=1.3) -> dict:
    return {i: SensorErrorModel(alpha=float(rng.uniform(*alpha)), beta=float(rng.uniform(*beta)),
                                noise_sigma=noise_sigma, rh_inflation=rh_inflation)
            for i in ids}


@dataclass(frozen=True)
class WeatherModel:
    """Daily sinusoidal temperature/RH cycles; RH peaks when temperature bottoms out."""

    temp_mean: dict = field(default_factory=lambda: {"monsoon": 27.0, "winter": 21.0, "summer": 33.0})
    rh_mean: dict = field(default_factory=lambda: {"monsoon": 74.0, "winter": 55.0, "summer": 35.0})
    temp_amplitude: float = 5.0
    rh_amplitude: float = 12.0
    temp_noise: float = 0.4
    rh_noise: float = 2.5
    warmest_hour: float = 14.0
    utc_offset_h: float = 0.0


def weather_series(model: WeatherModel, calendar: SeasonCalendar, times,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(times, dtype=float)
    seasons = calendar.seasons_of(t.astype("int64"))
    hour = np.mod(t / 3600.0 + model.utc_offset_h, 24.0)
    cyc = np.cos(2 * np.pi * (hour - model.warmest_hour) / 24.0)
    temp = np.array([model.temp_mean[s] for s in seasons]) + model.temp_amplitude * cyc
    rh = np.array([model.rh_mean[s] for s in seasons]) - model.rh_amplitude * cyc
    temp = temp + rng.normal(0.0, model.temp_noise, t.shape)
    rh = np.clip(rh + rng.normal(0.0, model.rh_noise, t.shape), 0.0, 100.0)
    return temp, rh


@dataclass(frozen=True)
class DeploymentEntry:
    device_id: int
    name: str
    point: GeoPoint
    location_type: str


@dataclass(frozen=True)
class DeploymentMap:
    region: BBox
    entries: tuple

    def __post_init__(self):
        ids = [e.device_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate device ids in deployment")
        for e in self.entries:
            if not 0 <= e.device_id <= 0xFFFF:
                raise ConfigError(f"device id {e.device_id} does not fit 16 bits")
            if e.location_type not in LOCATION_TYPES:
                raise ConfigError(f"unknown location type {e.location_type!r}")
            if not self.region.contains(e.point):
                raise ConfigError(f"device {e.device_id} outside deployment region")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_id(self) -> dict:
        return {e.device_id: e for e in self.entries}

    def subset(self, ids) -> "DeploymentMap":
        keep = set(ids)
        return DeploymentMap(self.region, tuple(e for e in self.entries if e.device_id in keep))


# location-type counts per operator: (IIITH, Airveda)
PAPER49_TYPES = {"L1": (7, 4), "L2": (5, 1), "L3": (15, 1), "L4": (16, 0)}
BOX_SIDE_M = 400.0


def generate_deployment(bbox: BBox, n: int, layout: str = "grid", seed: int = 0,
                        grid_shape: tuple[int, int] | None = None) -> DeploymentMap:
    """Place ``n`` devices in ``bbox``.

    Layouts: ``grid`` (cell centres, row-major from the north-west),
    ``paper49`` (49 devices jittered in 400 m boxes with a fixed
    L1-L4 mix), ``random`` (uniform) and ``colocated`` (all at the centre,
    for co-location runs).
    """
    if n < 1:
        raise ConfigError("need at least one device")
    rng = np.random.default_rng(seed)
    if layout == "grid":
        if grid_shape is None:
            k = math.ceil(math.sqrt(n))
            grid_shape = (k, k)
        nx, ny = grid_shape
        if n > nx * ny:
            raise ConfigError(f"{n} devices exceed {nx}x{ny} grid cells")
        points = cell_centers(bbox, nx, ny)[:n]
        types = [LOCATION_TYPES[i % 4] for i in range(n)]
        names = [f"D{i + 1:02d}" for i in range(n)]
    elif layout == "paper49":
        if n != 49:
            raise ConfigError("paper49 layout always has 49 devices")
        points, types, names = _paper49(bbox, rng)
    elif layout == "random":
        lats = rng.uniform(bbox.sw.lat, bbox.ne.lat, n)
        lons = rng.uniform(bbox.sw.lon, bbox.ne.lon, n)
        points = [GeoPoint(float(a), float(o)) for a, o in zip(lats, lons)]
        pool = [t for t, (a, b) in PAPER49_TYPES.items() for _ in range(a + b)]
        types = [pool[i] for i in rng.integers(0, len(pool), n)]
        names = [f"D{i + 1:02d}" for i in range(n)]
    elif layout == "colocated":
        points = [bbox.center] * n
        types = ["L1"] * n
        names = [f"D{i + 1:02d}" for i in range(n)]
    else:
        raise ConfigError(f"unknown layout {layout!r}")
    entries = tuple(DeploymentEntry(i + 1, names[i], points[i], types[i]) for i in range(n))
    return DeploymentMap(bbox, entries)


def _paper49(bbox: BBox, rng: np.random.Generator):
    side_m = (bbox.ne.lat - bbox.sw.lat) * M_PER_DEG
    nb = max(1, round(side_m / BOX_SIDE_M))
    n_boxes = nb * nb
    # every box gets one device, the remainder go to random distinct boxes
    extra = rng.choice(n_boxes, size=49 - n_boxes, replace=(49 - n_boxes) > n_boxes) if n_boxes < 49 else []
    boxes = list(range(min(n_boxes, 49))) + [int(b) for b in extra]
    dlat = (bbox.ne.lat - bbox.sw.lat) / nb
    dlon = (bbox.ne.lon - bbox.sw.lon) / nb
    points = []
    for b in boxes:
        r, c = divmod(b, nb)
        u, v = rng.uniform(0.05, 0.95, 2)
        points.append(GeoPoint(bbox.sw.lat + (r + u) * dlat, bbox.sw.lon + (c + v) * dlon))
    types, names = [], []
    for op, prefix, count in ((0, "AQ", 43), (1, "AV", 6)):
        for t, counts in PAPER49_TYPES.items():
            types += [t] * counts[op]
        names += [f"{prefix}-{k + 1:02d}" for k in range(count)]
    order = rng.permutation(49)
    return [points[i] for i in order], types, names


def write_truth_csv(dest, fld: GroundTruthField, deployment: DeploymentMap, times) -> None:
    """Ground truth at every device location: ``created_at,lat,lon,pm10,pm25``."""
    rows = []
    for e in deployment:
        pm10, pm25 = truth_series(fld, e.point, times)
        for t, a, b in zip(times, pm10, pm25):
            rows.append((int(t), e.point.lat, e.point.lon, a, b))
    rows.sort(key=lambda r: r[0])
    write_rows(dest, ["created_at", "lat", "lon", "pm10", "pm25"],
               ((iso(t), fmt(la), fmt(lo), fmt(a), fmt(b)) for t, la, lo, a, b in rows))
