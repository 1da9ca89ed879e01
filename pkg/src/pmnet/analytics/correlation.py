"""Pairwise rank correlation of device series against separation distance."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..csvio import fmt, read_rows, write_rows
from ..fieldsim import DeploymentMap
from ..geo import haversine
from .kendall import UndefinedCorrelation, kendall_tau

log = logging.getLogger(__name__)

MIN_OVERLAP = 24
CORRELATION_COLUMNS = ["device_a", "device_b", "distance_m", "tau", "n"]


@dataclass(frozen=True)
class CorrelationPoint:
    device_a: int
    device_b: int
    distance: float
    tau: float
    n_samples: int


def correlation_vs_distance(deployment: DeploymentMap, series: dict,
                            min_overlap: int = MIN_OVERLAP) -> list[CorrelationPoint]:
    """Kendall tau-b for every unordered device pair over their common hours.

    ``series`` maps device id to an hourly TimeSeries. Pairs with fewer than
    ``min_overlap`` common timestamps, or a constant side, are skipped and logged.
    """
    entries = [e for e in deployment if e.device_id in series]
    out = []
    for a, b in combinations(entries, 2):
        sa, sb = series[a.device_id], series[b.device_id]
        common, ia, ib = np.intersect1d(sa.times, sb.times, assume_unique=True, return_indices=True)
        if len(common) < min_overlap:
            log.info("skipping pair %d-%d: %d overlapping hours", a.device_id, b.device_id, len(common))
            continue
        try:
            tau = kendall_tau(sa.values[ia], sb.values[ib])
        except UndefinedCorrelation:
            log.info("skipping pair %d-%d: constant series", a.device_id, b.device_id)
            continue
        out.append(CorrelationPoint(a.device_id, b.device_id, haversine(a.point, b.point), tau, len(common)))
    return out


def bin_by_distance(points, width: float) -> list[tuple[float, float]]:
    """Mean (distance, tau) per distance bin of ``width`` metres, empty bins dropped."""
    bins: dict[int, list[CorrelationPoint]] = {}
    for p in points:
        bins.setdefault(int(p.distance // width), []).append(p)
    return [(float(np.mean([p.distance for p in ps])), float(np.mean([p.tau for p in ps])))
            for _, ps in sorted(bins.items())]


def write_correlation_csv(dest, points) -> None:
    write_rows(dest, CORRELATION_COLUMNS,
               ((p.device_a, p.device_b, fmt(p.distance), fmt(p.tau), p.n_samples) for p in points))


def read_correlation_csv(source, name: str = "correlation") -> list[CorrelationPoint]:
    rows = read_rows(source, tuple(CORRELATION_COLUMNS), name)
    return [CorrelationPoint(int(r["device_a"]), int(r["device_b"]), float(r["distance_m"]),
                             float(r["tau"]), int(r["n"])) for r in rows]
