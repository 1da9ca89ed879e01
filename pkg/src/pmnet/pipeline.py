"""Raw channel data to cleaned, calibrated series.

Order of operations per device: reliability filter (RH and sensor range),
monthly IQR outlier removal on what survives, linear gap filling, then the
per-season affine calibration.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .fieldsim import RH_UNRELIABLE, SENSOR_MAX, SENSOR_MIN
from .geo import DomainError
from .seasons import ConfigError, SeasonCalendar, month_keys

IQR_K = 1.5
MIN_IQR_POINTS = 4


class InsufficientData(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TimeSeries:
    device_id: int
    times: np.ndarray
    values: np.ndarray
    cadence: int = 30

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.int64)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise DomainError("times and values must be 1-D and equally long")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise DomainError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise DomainError("values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.times)

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.device_id, self.times, values, self.cadence)


@dataclass(frozen=True)
class IqrBounds:
    q1: float
    q3: float
    iqr: float
    lower: float
    upper: float


def filter_unreliable(series: TimeSeries, rh: TimeSeries) -> tuple[TimeSeries, np.ndarray]:
    """Mark points taken at RH > 80 % or outside the sensor range.

    Returns the series unchanged plus a boolean mask, True where removed.
    """
    if not np.array_equal(series.times, rh.times):
        raise DomainError("series and RH timestamps differ")
    mask = (rh.values > RH_UNRELIABLE) | (series.values < SENSOR_MIN) | (series.values > SENSOR_MAX)
    return series, mask


def quantile7(sorted_values: np.ndarray, p: float) -> float:
    """Linear interpolation between order statistics at position (n-1)p."""
    h = (len(sorted_values) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(sorted_values) - 1)
    return float(sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo]))


def iqr_bounds(values) -> IqrBounds:
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) < MIN_IQR_POINTS:
        raise InsufficientData(f"need at least {MIN_IQR_POINTS} values, got {len(v)}")
    q1 = quantile7(v, 0.25)
    q3 = quantile7(v, 0.75)
    iqr = q3 - q1
    return IqrBounds(q1, q3, iqr, q1 - IQR_K * iqr, q3 + IQR_K * iqr)


def remove_outliers(series: TimeSeries, bounds: IqrBounds) -> tuple[TimeSeries, np.ndarray]:
    """Mask points strictly outside ``[lower, upper]``; the bounds themselves are kept."""
    v = series.values
    return series, (v < bounds.lower) | (v > bounds.upper)


def monthly_outliers(series: TimeSeries, removed: np.ndarray | None = None) -> np.ndarray:
    """Outlier mask with bounds computed per calendar month over surviving points.

    Months with fewer than four surviving points are left alone.
    """
    removed = np.zeros(len(series), dtype=bool) if removed is None else removed
    out = np.zeros(len(series), dtype=bool)
    months = month_keys(series.times)
    for m in np.unique(months):
        sel = (months == m) & ~removed
        if sel.sum() < MIN_IQR_POINTS:
            continue
        b = iqr_bounds(series.values[sel])
        out |= sel & ((series.values < b.lower) | (series.values > b.upper))
    return out


def interpolate_gaps(series: TimeSeries, mask) -> TimeSeries:
    """Replace masked points by linear interpolation in time.

    Interior gaps use the nearest surviving neighbours on each side; leading
    and trailing gaps take the nearest surviving value.
    """
    mask = np.asarray(mask, dtype=bool)
    keep = ~mask
    if not keep.any():
        raise InsufficientData("no surviving points to interpolate from")
    if keep.all():
        return series
    filled = series.values.copy()
    filled[mask] = np.interp(series.times[mask], series.times[keep], series.values[keep])
    return series.with_values(filled)


@dataclass(frozen=True)
class CalibrationModel:
    device_id: int
    season: str
    pollutant: str
    m: float
    c: float
    fit_rmse: float
    n_points: int
    se_m: float = float("nan")
    se_c: float = float("nan")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CalibrationModel":
        return cls(**json.loads(line))


def fit_calibration(raw: TimeSeries, reference: TimeSeries, season: str | None = None,
                    pollutant: str = "pm10", calendar: SeasonCalendar | None = None) -> CalibrationModel:
    """Ordinary least squares ``reference ~ m * raw + c``."""
    if not np.array_equal(raw.times, reference.times):
        raise DomainError("raw and reference timestamps differ")
    n = len(raw)
    if n < 2:
        raise InsufficientData("need at least two co-located points")
    if season is None:
        seasons = set((calendar or SeasonCalendar()).seasons_of(raw.times))
        if len(seasons) != 1:
            raise ConfigError(f"co-location spans several seasons: {sorted(seasons)}")
        season = seasons.pop()
    x, y = raw.values, reference.values
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise DegenerateFit("raw series is constant")
    m = float(np.dot(dx, y - ym)) / sxx
    c = float(ym - m * xm)
    if not math.isfinite(m) or m <= 0:
        raise DegenerateFit(f"non-positive slope {m}")
    resid = y - (m * x + c)
    ssr = float(np.dot(resid, resid))
    rmse = math.sqrt(ssr / n)
    if n > 2:
        s2 = ssr / (n - 2)
        se_m = math.sqrt(s2 / sxx)
        se_c = math.sqrt(s2 * (1.0 / n + xm * xm / sxx))
    else:
        se_m = se_c = float("nan")
    return CalibrationModel(raw.device_id, season, pollutant, m, c, rmse, n, se_m, se_c)


def apply_calibration(series: TimeSeries, model: CalibrationModel,
                      calendar: SeasonCalendar | None = None) -> TimeSeries:
    seasons = set((calendar or SeasonCalendar()).seasons_of(series.times))
    wrong = seasons - {model.season}
    if wrong:
        raise ConfigError(f"{model.season} model applied to {sorted(wrong)} data")
    return series.with_values(np.maximum(model.m * series.values + model.c, 0.0))


def hourly_means(series: TimeSeries) -> TimeSeries:
    hours = series.times - series.times % 3600
    starts, idx = np.unique(hours, return_inverse=True)
    sums = np.bincount(idx, weights=series.values)
    counts = np.bincount(idx)
    return TimeSeries(series.device_id, starts, sums / counts, 3600)


def seasonal_stats(series: TimeSeries, calendar: SeasonCalendar | None = None) -> dict[str, tuple[float, float]]:
    """Population mean and variance of hourly means, per season present."""
    hourly = hourly_means(series)
    seasons = (calendar or SeasonCalendar()).seasons_of(hourly.times)
    out = {}
    for s in sorted(set(seasons)):
        v = hourly.values[seasons == s]
        out[s] = (float(v.mean()), float(v.var()))
    return out
