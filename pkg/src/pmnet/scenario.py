"""Scenario files: YAML documents that fully determine a simulated run.

Validation errors carry the YAML line of the offending key, e.g.
``diwali.scenario:14: field.events[0].sigma_m: must be > 0``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .csvio import parse_time
from .device import SAMPLE_PERIOD, OutageSchedule
from .fieldsim import (
    DeploymentMap,
    GroundTruthField,
    PlumeEvent,
    SensorErrorModel,
    Texture,
    WeatherModel,
    generate_deployment,
)
from .geo import BBox, DomainError, GeoPoint
from .seasons import DEFAULT_MONTHS, SEASONS, ConfigError, SeasonCalendar


class ScenarioError(ConfigError):
    def __init__(self, source: str, line: int | None, path: str, msg: str):
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {path}: {msg}" if path else f"{where}: {msg}")
        self.line = line


def _collect_lines(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = int(k.value) if k.tag.endswith(":int") else k.value
            _collect_lines(v, path + (key,), lines)
            lines[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _collect_lines(v, path + (i,), lines)


def _fmt_path(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


class _Doc:
    """Typed accessors over the parsed YAML that raise line-numbered errors."""

    def __init__(self, data, lines, source):
        self.data, self.lines, self.source = data, lines, source

    def fail(self, path, msg):
        line = None
        for k in range(len(path), -1, -1):
            if tuple(path[:k]) in self.lines:
                line = self.lines[tuple(path[:k])]
                break
        raise ScenarioError(self.source, line, _fmt_path(path), msg)

    def get(self, path, default=..., kind=None):
        cur = self.data
        for i, p in enumerate(path):
            if isinstance(cur, dict) and p in cur:
                cur = cur[p]
            elif isinstance(cur, list) and isinstance(p, int) and p < len(cur):
                cur = cur[p]
            else:
                if default is ...:
                    self.fail(path[:i + 1], "required key missing")
                return default
        if kind is not None and cur is not None and not _is(cur, kind):
            self.fail(path, f"expected {kind}, got {type(cur).__name__}")
        return cur

    def num(self, path, default=..., lo=None, hi=None, strict_lo=False):
        v = self.get(path, default)
        if v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        if lo is not None and (v <= lo if strict_lo else v < lo):
            self.fail(path, f"must be {'>' if strict_lo else '>='} {lo}")
        if hi is not None and v > hi:
            self.fail(path, f"must be <= {hi}")
        return float(v)

    def time(self, path, default=...):
        v = self.get(path, default)
        if v is default and default is not ...:
            return v
        if hasattr(v, "timestamp"):
            return int(v.timestamp()) if v.tzinfo else parse_time(v.isoformat())
        try:
            return parse_time(v)
        except (ValueError, TypeError):
            self.fail(path, f"not an ISO-8601 time: {v!r}")

    def pair(self, path, default=...):
        v = self.get(path, default)
        if v is default and default is not ...:
            return v
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return (float(v), float(v))
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v)):
            self.fail(path, f"expected a number or [lo, hi], got {v!r}")
        if v[0] > v[1]:
            self.fail(path, "range lower bound exceeds upper bound")
        return (float(v[0]), float(v[1]))

    def point(self, path):
        v = self.get(path)
        if not (isinstance(v, list) and len(v) == 2):
            self.fail(path, "expected [lat, lon]")
        try:
            return GeoPoint(float(v[0]), float(v[1]))
        except (DomainError, TypeError, ValueError) as exc:
            self.fail(path, str(exc))


def _is(v, kind):
    return isinstance(v, {"mapping": dict, "list": list, "string": str}[kind])


GRID_RE = re.compile(r"^(\d+)x(\d+)$")


@dataclass
class Analysis:
    power: float = 2.0
    nx: int = 40
    ny: int = 40
    subsets: tuple = (4, 12)
    subset_seed: int = 0
    pollutants: tuple = ("pm10", "pm25")
    correlation_pollutant: str = "pm10"
    knee_threshold: float = 0.025
    bin_m: float | None = None


@dataclass
class Scenario:
    name: str
    seed: int
    start: int
    end: int
    region: BBox
    calendar: SeasonCalendar
    field: GroundTruthField
    deployment: DeploymentMap
    error_models: dict
    outages: dict
    weather: WeatherModel
    colocation_days: float = 7.0
    reference_noise: float = 0.0
    analysis: Analysis = field(default_factory=Analysis)
    raw: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start, self.end, SAMPLE_PERIOD, dtype=np.int64)


def load_scenario(path, seed: int | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(str(path), None, "", f"cannot read: {exc.strerror}") from None
    return parse_scenario(text, source=path.name, seed=seed)


def parse_scenario(text: str, source: str = "<scenario>", seed: int | None = None) -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(source, mark.line + 1 if mark else None, "",
                            f"YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if node is None or not isinstance(node, yaml.MappingNode):
        raise ScenarioError(source, 1, "", "scenario must be a mapping")
    lines: dict = {}
    _collect_lines(node, (), lines)
    data = yaml.safe_load(text)
    doc = _Doc(data, lines, source)
    try:
        return _build(doc, seed)
    except ScenarioError:
        raise
    except (ConfigError, DomainError, ValueError) as exc:
        raise ScenarioError(source, None, "", str(exc)) from None


LAYOUTS = ("grid", "paper49", "random", "colocated")
KNOWN_TOP = {"name", "seed", "start", "duration_h", "region", "calendar", "field", "deployment",
             "sensors", "weather", "outages", "colocation", "analysis"}


def _build(doc: _Doc, seed_override) -> Scenario:
    for key in doc.data:
        if key not in KNOWN_TOP:
            doc.fail((key,), "unknown key")
    seed = int(doc.num(("seed",), 0, lo=0)) if seed_override is None else int(seed_override)
    start = doc.time(("start",))
    if start % SAMPLE_PERIOD:
        doc.fail(("start",), f"must be aligned to {SAMPLE_PERIOD} s")
    duration_h = doc.num(("duration_h",), lo=0, strict_lo=True)
    end = start + int(round(duration_h * 3600))

    center = doc.point(("region", "center"))
    side = doc.num(("region", "side_m"), 2000.0, lo=0, strict_lo=True)
    region = BBox.square(center, side)

    months = doc.get(("calendar",), None, kind="mapping")
    if months is not None:
        for s, ms in months.items():
            if s not in SEASONS:
                doc.fail(("calendar", s), f"unknown season (expected one of {', '.join(SEASONS)})")
            if not isinstance(ms, list):
                doc.fail(("calendar", s), "expected a list of months")
        try:
            calendar = SeasonCalendar({s: tuple(int(m) for m in ms) for s, ms in months.items()})
        except ConfigError as exc:
            doc.fail(("calendar",), str(exc))
    else:
        calendar = SeasonCalendar(dict(DEFAULT_MONTHS))

    rng = np.random.default_rng([seed, 0xF1E1D])
    fld = _field(doc, region, calendar, seed, rng)

    layout = doc.get(("deployment", "layout"), "paper49", kind="string")
    if layout not in LAYOUTS:
        doc.fail(("deployment", "layout"), f"unknown layout {layout!r} (expected one of {', '.join(LAYOUTS)})")
    n = int(doc.num(("deployment", "n"), 49, lo=1))
    dep_seed = int(doc.num(("deployment", "seed"), seed, lo=0))
    shape = doc.get(("deployment", "grid"), None)
    if shape is not None:
        m = GRID_RE.match(str(shape))
        if not m:
            doc.fail(("deployment", "grid"), "expected NXxNY, e.g. 7x7")
        shape = (int(m.group(1)), int(m.group(2)))
    try:
        deployment = generate_deployment(region, n, layout, dep_seed, shape)
    except ConfigError as exc:
        doc.fail(("deployment",), str(exc))

    error_models = _sensors(doc, deployment, seed)
    outages = _outages(doc, deployment, start, end, seed)

    wcfg = doc.get(("weather",), {}, kind="mapping") or {}
    weather = WeatherModel(**{k: (dict(v) if isinstance(v, dict) else float(v)) for k, v in wcfg.items()
                              if k in WeatherModel.__dataclass_fields__}) if wcfg else WeatherModel()
    for k in wcfg:
        if k not in WeatherModel.__dataclass_fields__:
            doc.fail(("weather", k), "unknown key")

    coloc_days = doc.num(("colocation", "days"), 7.0, lo=0, strict_lo=True)
    ref_noise = doc.num(("colocation", "reference_noise"), 0.0, lo=0)

    analysis = Analysis()
    analysis.power = doc.num(("analysis", "power"), 2.0, lo=0, strict_lo=True)
    g = doc.get(("analysis", "grid"), "40x40")
    m = GRID_RE.match(str(g))
    if not m or int(m.group(1)) < 2 or int(m.group(2)) < 2:
        doc.fail(("analysis", "grid"), "expected NXxNY with both >= 2")
    analysis.nx, analysis.ny = int(m.group(1)), int(m.group(2))
    subsets = doc.get(("analysis", "subsets"), [4, 12], kind="list")
    for i, k in enumerate(subsets):
        if not isinstance(k, int) or not 1 <= k <= len(deployment):
            doc.fail(("analysis", "subsets", i), f"subset size must be 1..{len(deployment)}")
    analysis.subsets = tuple(subsets)
    analysis.subset_seed = int(doc.num(("analysis", "subset_seed"), seed, lo=0))
    pols = doc.get(("analysis", "pollutants"), ["pm10", "pm25"], kind="list")
    for i, p in enumerate(pols):
        if p not in ("pm10", "pm25"):
            doc.fail(("analysis", "pollutants", i), "expected pm10 or pm25")
    analysis.pollutants = tuple(pols)
    analysis.correlation_pollutant = doc.get(("analysis", "correlation_pollutant"), "pm10")
    if analysis.correlation_pollutant not in ("pm10", "pm25"):
        doc.fail(("analysis", "correlation_pollutant"), "expected pm10 or pm25")
    analysis.knee_threshold = doc.num(("analysis", "knee_threshold"), 0.025, lo=0, strict_lo=True, hi=1)
    analysis.bin_m = doc.num(("analysis", "bin_m"), None, lo=0, strict_lo=True)

    return Scenario(name=str(doc.get(("name",), "scenario")), seed=seed, start=start, end=end,
                    region=region, calendar=calendar, field=fld, deployment=deployment,
                    error_models=error_models, outages=outages, weather=weather,
                    colocation_days=coloc_days, reference_noise=ref_noise, analysis=analysis,
                    raw=doc.data)


def _texture(doc, path, seed_default):
    if doc.get(path, None) is None:
        return None
    return Texture(length_scale=doc.num(path + ("length_scale_m",), lo=0, strict_lo=True),
                   amplitude=doc.num(path + ("amplitude",), lo=0),
                   seed=int(doc.num(path + ("seed",), seed_default, lo=0)),
                   time_scale=3600.0 * doc.num(path + ("time_scale_h",), 3.0, lo=0, strict_lo=True),
                   n_features=int(doc.num(path + ("features",), 192, lo=1)))


def _field(doc, region, calendar, seed, rng) -> GroundTruthField:
    base = {s: doc.num(("field", "baseline", s), lo=0) for s in SEASONS}
    diurnal = []
    for i, h in enumerate(doc.get(("field", "diurnal"), [], kind="list")):
        if not (isinstance(h, list) and len(h) == 2):
            doc.fail(("field", "diurnal", i), "expected [phase_hour, amplitude]")
        diurnal.append((doc.num(("field", "diurnal", i, 0)), doc.num(("field", "diurnal", i, 1), lo=0)))
    events = []
    for i, _ in enumerate(doc.get(("field", "events"), [], kind="list")):
        p = ("field", "events", i)
        try:
            events.append(PlumeEvent(doc.point(p + ("center",)),
                                     doc.num(p + ("sigma_m",), lo=0, strict_lo=True),
                                     doc.num(p + ("peak",), lo=0),
                                     doc.time(p + ("start",)), doc.time(p + ("peak_time",)),
                                     doc.time(p + ("end",))))
        except ScenarioError:
            raise
        except ConfigError as exc:
            doc.fail(p, str(exc))
        if not region.contains(events[-1].center):
            doc.fail(p + ("center",), "outside the region")
    gen = doc.get(("field", "event_generator"), None, kind="mapping")
    if gen is not None:
        p = ("field", "event_generator")
        count = int(doc.num(p + ("count",), lo=1))
        t0, tp, t1 = doc.time(p + ("start",)), doc.time(p + ("peak_time",)), doc.time(p + ("end",))
        if not t0 < tp < t1:
            doc.fail(p, "needs start < peak_time < end")
        jitter = doc.num(p + ("jitter_min",), 0.0, lo=0) * 60
        sig_lo, sig_hi = doc.pair(p + ("sigma_m",))
        pk_lo, pk_hi = doc.pair(p + ("peak",))
        for _ in range(count):
            lat = float(rng.uniform(region.sw.lat, region.ne.lat))
            lon = float(rng.uniform(region.sw.lon, region.ne.lon))
            shift = float(rng.uniform(-jitter, jitter)) if jitter else 0.0
            events.append(PlumeEvent(GeoPoint(lat, lon), float(rng.uniform(sig_lo, sig_hi)),
                                     float(rng.uniform(pk_lo, pk_hi)), t0 + shift, tp + shift, t1 + shift))
    return GroundTruthField(region=region, baseline=base, diurnal=tuple(diurnal), events=tuple(events),
                            texture=_texture(doc, ("field", "texture"), seed),
                            pm25_ratio=doc.num(("field", "pm25_ratio"), 0.55, lo=0, strict_lo=True, hi=1),
                            pm25_texture=_texture(doc, ("field", "pm25_texture"), seed + 1),
                            calendar=calendar)


def _sensors(doc, deployment, seed) -> dict:
    p = ("sensors",)
    alpha = doc.pair(p + ("alpha",), (0.6, 1.6))
    beta = doc.pair(p + ("beta",), (-10.0, 20.0))
    noise = doc.num(p + ("noise_sigma",), 2.0, lo=0)
    infl = doc.num(p + ("rh_inflation",), 1.3, lo=1)
    if alpha[0] <= 0:
        doc.fail(p + ("alpha",), "gain must be > 0")
    rng = np.random.default_rng([seed, 0x5E4])
    models = {}
    for e in deployment:
        models[e.device_id] = SensorErrorModel(alpha=float(rng.uniform(*alpha)), beta=float(rng.uniform(*beta)),
                                               noise_sigma=noise, rh_inflation=infl)
    return models


def _outages(doc, deployment, start, end, seed) -> dict:
    p = ("outages",)
    cfg = doc.get(p, {}, kind="mapping") or {}
    explicit = cfg.get("explicit")
    out = {}
    if explicit is not None:
        for key, intervals in explicit.items():
            if int(key) not in deployment.by_id():
                doc.fail(p + ("explicit", key), "unknown device id")
            try:
                out[int(key)] = OutageSchedule(tuple((doc.time(p + ("explicit", key, i, 0)),
                                                      doc.time(p + ("explicit", key, i, 1)))
                                                     for i in range(len(intervals))))
            except ValueError as exc:
                doc.fail(p + ("explicit", key), str(exc))
        return out
    per_device = int(doc.num(p + ("per_device",), 0, lo=0))
    max_hours = doc.num(p + ("max_hours",), 6.0, lo=0, strict_lo=True)
    max_samples = max(1, int(max_hours * 3600 // SAMPLE_PERIOD))
    for e in deployment:
        rng = np.random.default_rng([seed, e.device_id, 0x0DA])
        out[e.device_id] = OutageSchedule.random(rng, start, end, per_device, max_samples)
    return out
