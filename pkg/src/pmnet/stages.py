"""File-to-file stages. ``run`` and the individual subcommands call these same functions.

Directory layout of a run::

    deployment.json           region + devices
    truth.csv                 hourly ground truth at device locations
    fleet.json                sensed / dropped / ingested counters
    raw/<id>.csv              gateway export
    colocation/<id>.csv       co-location raw exports, reference.csv
    clean/<id>.csv            cleaned series, + stage column
    calibration/models.jsonl  one CalibrationModel per line
    calibrated/<id>.csv       calibrated series, + stage column
    seasonal.csv              per-device seasonal mean/variance
    grids/<pollutant>/<hour>.csv|.pgm, grids/sparse.csv, grids/summary.json
    correlation.csv, fit_report.json, manifest.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    FitError,
    bin_by_distance,
    correlation_vs_distance,
    fit_report,
    fit_two_term_exp,
    grid_pgm,
    idw_grid,
    read_correlation_csv,
    sparse_subset_rmse,
    spread_subset,
    write_correlation_csv,
    write_grid_csv,
)
from .csvio import SchemaError, fmt, iso, parse_time, read_rows, write_rows
from .device import SAMPLE_PERIOD, SensorReading
from .fieldsim import (
    RH_UNRELIABLE,
    SENSOR_MAX,
    SENSOR_MIN,
    DeploymentEntry,
    DeploymentMap,
    truth_series,
    write_truth_csv,
)
from .fleet import run_fleet, sense
from .gateway import EXPORT_COLUMNS, Gateway, import_csv
from .gateway.store import reading_cells
from .geo import BBox, GeoPoint
from .pipeline import (
    CalibrationModel,
    TimeSeries,
    apply_calibration,
    filter_unreliable,
    fit_calibration,
    hourly_means,
    interpolate_gaps,
    monthly_outliers,
    seasonal_stats,
)
from .seasons import ConfigError, SeasonCalendar

log = logging.getLogger(__name__)

STAGE_COLUMNS = EXPORT_COLUMNS + ["stage"]
POLLUTANTS = ("pm10", "pm25")


@dataclass(frozen=True)
class StageRow:
    created_at: int
    pm10: float
    pm25: float
    temp: float
    rh: float
    stage: str

    def cells(self):
        return (iso(self.created_at), fmt(self.pm10), fmt(self.pm25), fmt(self.temp), fmt(self.rh), self.stage)


def device_file(device_id: int) -> str:
    return f"{device_id:05d}.csv"


def device_files(directory: Path) -> dict[int, Path]:
    out = {}
    for p in sorted(Path(directory).glob("*.csv")):
        if p.stem.isdigit():
            out[int(p.stem)] = p
    if not out:
        raise SchemaError(f"{directory}: no <device_id>.csv files")
    return out


# deployment files

def write_deployment(path: Path, deployment: DeploymentMap) -> None:
    r = deployment.region
    doc = {"region": {"sw": [r.sw.lat, r.sw.lon], "ne": [r.ne.lat, r.ne.lon]},
           "devices": [{"device_id": e.device_id, "name": e.name, "lat": e.point.lat, "lon": e.point.lon,
                        "location_type": e.location_type} for e in deployment]}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_deployment(path: Path) -> DeploymentMap:
    try:
        doc = json.loads(Path(path).read_text())
        region = BBox(GeoPoint(*doc["region"]["sw"]), GeoPoint(*doc["region"]["ne"]))
        entries = tuple(DeploymentEntry(int(d["device_id"]), d["name"], GeoPoint(d["lat"], d["lon"]),
                                        d["location_type"]) for d in doc["devices"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: malformed deployment file ({exc})") from None
    return DeploymentMap(region, entries)


# simulate

def colocation_windows(times: np.ndarray, calendar: SeasonCalendar, days: float) -> list[np.ndarray]:
    """One co-location run per season present in ``times``, starting at that season's
    first timestamp and lasting ``days`` (cut short at the season's end)."""
    seasons = calendar.seasons_of(times)
    out = []
    seen = set()
    for i, s in enumerate(seasons):
        if s in seen or (i and seasons[i - 1] == s):
            continue
        seen.add(s)
        t0 = int(times[i])
        window = np.arange(t0, t0 + int(days * 86400), SAMPLE_PERIOD, dtype=np.int64)
        same = calendar.seasons_of(window) == s
        cut = len(window) if same.all() else int(np.argmin(same))
        out.append(window[:cut])
    return out


def simulate(scn, out: Path) -> dict:
    out = Path(out)
    for sub in ("raw", "colocation"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_deployment(out / "deployment.json", scn.deployment)
    times = scn.times

    hourly = times[times % 3600 == 0]
    write_truth_csv(out / "truth.csv", scn.field, scn.deployment, hourly)

    gateway = Gateway()
    readings = {}
    for e in scn.deployment:
        gateway.register(e.device_id, name=e.name, lat=e.point.lat, lon=e.point.lon,
                         location_type=e.location_type)
        readings[e.device_id] = sense(scn.field, e, scn.error_models[e.device_id], scn.weather, times, scn.seed)
    run = run_fleet(readings, scn.outages, gateway.handle_frame)
    for e in scn.deployment:
        gateway.export_csv(e.device_id, out / "raw" / device_file(e.device_id))

    # co-location: every device next to a reference instrument at the region centre
    site = scn.region.center
    coloc_times = np.concatenate(colocation_windows(times, scn.calendar, scn.colocation_days) or [times[:0]])
    ref10, ref25 = truth_series(scn.field, site, coloc_times)
    if scn.reference_noise > 0:
        rng = np.random.default_rng([scn.seed, 0xC010C])
        ref10 = np.maximum(ref10 + rng.normal(0, scn.reference_noise, ref10.shape), 0.0)
        ref25 = np.maximum(ref25 + rng.normal(0, scn.reference_noise, ref25.shape), 0.0)
    write_rows(out / "colocation" / "reference.csv", ["created_at", "pm10", "pm25"],
               ((iso(t), fmt(a), fmt(b)) for t, a, b in zip(coloc_times.tolist(), ref10, ref25)))
    for e in scn.deployment:
        at_site = DeploymentEntry(e.device_id, e.name, site, e.location_type)
        rows = sense(scn.field, at_site, scn.error_models[e.device_id], scn.weather, coloc_times,
                     scn.seed + 0x10000)
        write_rows(out / "colocation" / device_file(e.device_id), EXPORT_COLUMNS,
                   (reading_cells(r) for r in rows))

    stats = {"devices": len(scn.deployment), "sensed": run.sensed, "dropped": run.dropped,
             "pending": run.pending, "ingested": gateway.total_readings(), "frames": run.frames,
             "rejected": run.rejected}
    (out / "fleet.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    return stats


# clean

def clean_readings(readings: list[SensorReading], device_id: int = 0) -> list[StageRow]:
    """Reliability filter, monthly IQR outliers, linear gap fill for pm10 and pm25.

    ``stage`` is ``kept`` or a ``;``-joined list of ``<pollutant>:<reason>``
    with reason ``rh``, ``range`` or ``outlier``; flagged values are the
    interpolated replacements.
    """
    if not readings:
        return []
    t = np.array([r.created_at for r in readings], dtype=np.int64)
    rh = TimeSeries(device_id, t, [r.rh for r in readings])
    reasons = [[] for _ in readings]
    filled = {}
    for pol in POLLUTANTS:
        s = TimeSeries(device_id, t, [getattr(r, pol) for r in readings])
        _, unreliable = filter_unreliable(s, rh)
        outliers = monthly_outliers(s, unreliable)
        for i in np.nonzero(unreliable | outliers)[0]:
            if rh.values[i] > RH_UNRELIABLE:
                why = "rh"
            elif not SENSOR_MIN <= s.values[i] <= SENSOR_MAX:
                why = "range"
            else:
                why = "outlier"
            reasons[i].append(f"{pol}:{why}")
        filled[pol] = interpolate_gaps(s, unreliable | outliers).values
    return [StageRow(r.created_at, float(filled["pm10"][i]), float(filled["pm25"][i]), r.temp, r.rh,
                     ";".join(reasons[i]) or "kept") for i, r in enumerate(readings)]


def write_stage_csv(path, rows) -> None:
    write_rows(path, STAGE_COLUMNS, (r.cells() for r in rows))


def read_stage_csv(path) -> list[StageRow]:
    rows = read_rows(path, tuple(STAGE_COLUMNS), str(path))
    return [StageRow(parse_time(r["created_at"]), float(r["pm10"]), float(r["pm25"]), float(r["temp"]),
                     float(r["rh"]), r["stage"]) for r in rows]


def clean(in_dir: Path, out_dir: Path) -> dict[int, int]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for device_id, path in device_files(in_dir).items():
        rows = clean_readings(import_csv(path, str(path)), device_id)
        write_stage_csv(out_dir / device_file(device_id), rows)
        counts[device_id] = len(rows)
    return counts


# calibrate

def fit_models(coloc_dir: Path, calendar: SeasonCalendar) -> list[CalibrationModel]:
    coloc_dir = Path(coloc_dir)
    ref_rows = read_rows(coloc_dir / "reference.csv", ("created_at", "pm10", "pm25"), "reference.csv")
    ref_t = np.array([parse_time(r["created_at"]) for r in ref_rows], dtype=np.int64)
    ref = {p: np.array([float(r[p]) for r in ref_rows]) for p in POLLUTANTS}
    models = []
    for device_id, path in device_files(coloc_dir).items():
        readings = import_csv(path, str(path))
        t = np.array([r.created_at for r in readings], dtype=np.int64)
        rh = np.array([r.rh for r in readings])
        common, ia, ib = np.intersect1d(t, ref_t, assume_unique=True, return_indices=True)
        seasons = calendar.seasons_of(common)
        for pol in POLLUTANTS:
            raw = np.array([getattr(r, pol) for r in readings])[ia]
            usable = (rh[ia] <= RH_UNRELIABLE) & (raw >= SENSOR_MIN) & (raw <= SENSOR_MAX)
            for season in sorted(set(seasons)):
                sel = usable & (seasons == season)
                if sel.sum() < 2:
                    log.warning("device %d %s %s: too few co-located points", device_id, season, pol)
                    continue
                models.append(fit_calibration(TimeSeries(device_id, common[sel], raw[sel]),
                                              TimeSeries(device_id, common[sel], ref[pol][ib][sel]),
                                              season=season, pollutant=pol))
    return models


def write_models(path: Path, models) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(m.to_json() + "\n" for m in models))


def read_models(path: Path) -> list[CalibrationModel]:
    return [CalibrationModel.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


def calibrate_rows(rows: list[StageRow], models: dict, calendar: SeasonCalendar, device_id: int) -> list[StageRow]:
    """Apply the (season, pollutant) models of one device to cleaned rows."""
    if not rows:
        return []
    t = np.array([r.created_at for r in rows], dtype=np.int64)
    seasons = calendar.seasons_of(t)
    out = {}
    for pol in POLLUTANTS:
        vals = np.array([getattr(r, pol) for r in rows])
        res = np.empty_like(vals)
        for season in sorted(set(seasons)):
            key = (season, pol)
            if key not in models:
                raise ConfigError(f"device {device_id}: no {season} calibration for {pol}")
            sel = seasons == season
            res[sel] = apply_calibration(TimeSeries(device_id, t[sel], vals[sel]), models[key], calendar).values
        out[pol] = res
    return [StageRow(r.created_at, float(out["pm10"][i]), float(out["pm25"][i]), r.temp, r.rh,
                     "calibrated" if r.stage == "kept" else f"calibrated;{r.stage}")
            for i, r in enumerate(rows)]


def calibrate(coloc_dir: Path, in_dir: Path, out: Path, calendar: SeasonCalendar) -> list[CalibrationModel]:
    out = Path(out)
    models = fit_models(coloc_dir, calendar)
    write_models(out / "calibration" / "models.jsonl", models)
    by_device: dict[int, dict] = {}
    for m in models:
        by_device.setdefault(m.device_id, {})[(m.season, m.pollutant)] = m
    (out / "calibrated").mkdir(parents=True, exist_ok=True)
    for device_id, path in device_files(in_dir).items():
        rows = calibrate_rows(read_stage_csv(path), by_device.get(device_id, {}), calendar, device_id)
        write_stage_csv(out / "calibrated" / device_file(device_id), rows)
    return models


# statistics and analytics

def hourly_by_device(in_dir: Path, pollutant: str) -> dict[int, TimeSeries]:
    out = {}
    for device_id, path in device_files(in_dir).items():
        rows = read_stage_csv(path)
        if rows:
            s = TimeSeries(device_id, [r.created_at for r in rows], [getattr(r, pollutant) for r in rows])
            out[device_id] = hourly_means(s)
    return out


def seasonal(in_dir: Path, out_path: Path, calendar: SeasonCalendar) -> None:
    rows = []
    for pol in POLLUTANTS:
        for device_id, path in device_files(in_dir).items():
            recs = read_stage_csv(path)
            if not recs:
                continue
            s = TimeSeries(device_id, [r.created_at for r in recs], [getattr(r, pol) for r in recs])
            for season, (mean, var) in seasonal_stats(s, calendar).items():
                rows.append((device_id, pol, season, fmt(mean), fmt(var)))
    write_rows(out_path, ["device_id", "pollutant", "season", "mean", "variance"], rows)


def _stamp(t: int) -> str:
    return iso(t).replace("-", "").replace(":", "")


def grids(deployment_path: Path, in_dir: Path, out_dir: Path, pollutants=("pm10",), power: float = 2.0,
          nx: int = 40, ny: int = 40, subsets=(), subset_seed: int = 0, hour: int | None = None) -> dict:
    """Full-deployment IDW grids per hour and pollutant, plus sparse-subset RMSE.

    With ``hour`` set only that hour is rendered and the sparse grids are
    written too (``<hour>_k<k>.csv``).
    """
    deployment = read_deployment(deployment_path)
    out_dir = Path(out_dir)
    picks = {k: spread_subset(deployment, k, np.random.default_rng([subset_seed, k])) for k in subsets}
    sparse_rows = []
    summary = {"power": power, "nx": nx, "ny": ny, "subsets": {str(k): v for k, v in picks.items()},
               "pollutants": {}}
    for pol in pollutants:
        (out_dir / pol).mkdir(parents=True, exist_ok=True)
        series = hourly_by_device(in_dir, pol)
        by_hour: dict[int, dict] = {}
        for device_id, s in series.items():
            for t, v in zip(s.times.tolist(), s.values.tolist()):
                by_hour.setdefault(t, {})[device_id] = v
        hours = sorted(by_hour) if hour is None else [hour - hour % 3600]
        means = {}
        for h in hours:
            if h not in by_hour:
                raise ConfigError(f"no {pol} data for hour {iso(h)}")
            values = by_hour[h]
            full = idw_grid(deployment, values, deployment.region, nx, ny, power, h, pol)
            write_grid_csv(out_dir / pol / f"{_stamp(h)}.csv", full)
            (out_dir / pol / f"{_stamp(h)}.pgm").write_bytes(grid_pgm(full))
            means[h] = float(full.cells.mean())
            for k, ids in picks.items():
                err = sparse_subset_rmse(full, deployment, ids, values, power)
                sparse_rows.append((iso(h), pol, k, fmt(err)))
                if hour is not None:
                    sub = idw_grid(deployment.subset(ids), {i: values[i] for i in ids if i in values},
                                   deployment.region, nx, ny, power, h, pol)
                    write_grid_csv(out_dir / pol / f"{_stamp(h)}_k{k}.csv", sub)
        peak = max(means, key=lambda h: (means[h], -h))
        summary["pollutants"][pol] = {"hours": len(hours), "peak_hour": iso(peak), "peak_mean": means[peak]}
    write_rows(out_dir / "sparse.csv", ["hour", "pollutant", "k", "rmse"], sparse_rows)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def correlate(deployment_path: Path, in_dir: Path, out_path: Path, pollutant: str = "pm10") -> int:
    deployment = read_deployment(deployment_path)
    points = correlation_vs_distance(deployment, hourly_by_device(in_dir, pollutant))
    write_correlation_csv(out_path, points)
    return len(points)


def fit(corr_path: Path, out_path: Path, threshold: float = 0.025, bin_m: float | None = None) -> dict:
    """Fit the decay curve and write the report; a failed fit is reported, then re-raised."""
    points = read_correlation_csv(corr_path, str(corr_path))
    xy = bin_by_distance(points, bin_m) if bin_m else [(p.distance, p.tau) for p in points]
    try:
        model = fit_two_term_exp(xy)
    except FitError as exc:
        report = {"error": str(exc), "n_points": len(xy), "knee_threshold": threshold, "binned_width_m": bin_m}
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        raise
    text = fit_report(model, threshold, bin_m)
    Path(out_path).write_text(text)
    return json.loads(text)


def manifest(out: Path, scn) -> dict:
    out = Path(out)
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    body = {"scenario": scn.name, "seed": scn.seed,
            "versions": {"pmnet": __version__, "numpy": np.__version__,
                         "python": ".".join(platform.python_version_tuple()[:2])},
            "files": files}
    body["hash"] = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    (out / "manifest.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    return body


def run_scenario(scn, out: Path) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    a = scn.analysis
    simulate(scn, out)
    clean(out / "raw", out / "clean")
    calibrate(out / "colocation", out / "clean", out, scn.calendar)
    seasonal(out / "calibrated", out / "seasonal.csv", scn.calendar)
    grids(out / "deployment.json", out / "calibrated", out / "grids", a.pollutants, a.power, a.nx, a.ny,
          a.subsets, a.subset_seed)
    correlate(out / "deployment.json", out / "calibrated", out / "correlation.csv", a.correlation_pollutant)
    try:
        fit(out / "correlation.csv", out / "fit_report.json", a.knee_threshold, a.bin_m)
    except FitError as exc:
        log.warning("decay fit failed: %s", exc)
    return manifest(out, scn)
