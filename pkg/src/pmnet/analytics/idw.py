"""Inverse distance weighting: point estimates, rasters, sparse-vs-dense error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..csvio import fmt, write_rows
from ..fieldsim import DeploymentMap
from ..geo import BBox, DomainError, GeoPoint, cell_centers, haversine

SNAP_M = 0.5


class GridError(ValueError):
    pass


def idw(samples, target: GeoPoint, power: float = 2.0) -> float:
    """Weighted mean of ``(GeoPoint, value)`` samples with weights ``d**-power``.

    A sample closer than half a metre to ``target`` is returned as is.
    """
    if not samples:
        raise DomainError("idw needs at least one sample")
    if power <= 0:
        raise DomainError("idw power must be > 0")
    num = 0.0
    den = 0.0
    for point, value in samples:
        d = haversine(point, target)
        if d < SNAP_M:
            return float(value)
        w = d ** -power
        num += w * value
        den += w
    return num / den


@dataclass(frozen=True, eq=False)
class Grid:
    bbox: BBox
    nx: int
    ny: int
    cells: np.ndarray  # shape (ny, nx), row 0 = north
    timestamp: int | None = None
    pollutant: str = "pm10"

    def centers(self) -> list[GeoPoint]:
        return cell_centers(self.bbox, self.nx, self.ny)


@lru_cache(maxsize=64)
def _weights(points: tuple, bbox: BBox, nx: int, ny: int, power: float):
    """Per-cell weights and the index of a coincident device (or -1)."""
    centers = cell_centers(bbox, nx, ny)
    w = np.empty((len(centers), len(points)))
    snap = np.full(len(centers), -1)
    for i, c in enumerate(centers):
        for j, p in enumerate(points):
            d = haversine(p, c)
            if d < SNAP_M and snap[i] < 0:
                snap[i] = j
            w[i, j] = d ** -power if d > 0 else math.inf
    return w, snap


def idw_grid(deployment: DeploymentMap, values: dict, bbox: BBox | None = None, nx: int = 40,
             ny: int = 40, power: float = 2.0, timestamp: int | None = None,
             pollutant: str = "pm10") -> Grid:
    """IDW raster from the devices that have a value.

    Accumulates over devices in deployment order, which keeps every cell
    bit-identical to calling :func:`idw` on that cell centre.
    """
    if nx < 2 or ny < 2:
        raise GridError("grid needs at least 2x2 cells")
    if power <= 0:
        raise DomainError("idw power must be > 0")
    bbox = bbox or deployment.region
    entries = [e for e in deployment if e.device_id in values and values[e.device_id] is not None]
    if not entries:
        raise GridError("no device reported a value")
    w, snap = _weights(tuple(e.point for e in entries), bbox, nx, ny, float(power))
    v = [float(values[e.device_id]) for e in entries]
    num = np.zeros(len(w))
    den = np.zeros(len(w))
    for j in range(len(entries)):
        col = w[:, j]
        num = num + col * v[j]
        den = den + col
    with np.errstate(invalid="ignore"):
        out = num / den
    hit = snap >= 0
    out[hit] = np.array(v)[snap[hit]]
    return Grid(bbox, nx, ny, out.reshape(ny, nx), timestamp, pollutant)


def rmse(a: Grid, b: Grid) -> float:
    if a.cells.shape != b.cells.shape:
        raise GridError("grids differ in shape")
    return float(np.sqrt(np.mean((a.cells - b.cells) ** 2)))


def sparse_subset_rmse(full: Grid, deployment: DeploymentMap, subset_ids, values: dict,
                       power: float = 2.0) -> float:
    """RMSE of the grid built from ``subset_ids`` only against ``full``."""
    subset_ids = list(subset_ids)
    if not subset_ids:
        raise DomainError("empty subset")
    known = {e.device_id for e in deployment}
    if not set(subset_ids) <= known:
        raise DomainError("subset contains devices outside the deployment")
    sub_values = {i: values[i] for i in subset_ids if i in values}
    sub = idw_grid(deployment.subset(subset_ids), sub_values, full.bbox, full.nx, full.ny, power,
                   full.timestamp, full.pollutant)
    return rmse(full, sub)


def spread_subset(deployment: DeploymentMap, k: int, rng: np.random.Generator,
                  min_separation: float | None = None, tries: int = 2000) -> list[int]:
    """Random ``k`` devices that do not cluster: pairwise distance >= ``min_separation``.

    Falls back to the most spread-out draw when the constraint cannot be met.
    The default separation is half the spacing of a regular k-device grid.
    """
    entries = list(deployment)
    if not 1 <= k <= len(entries):
        raise DomainError(f"cannot pick {k} of {len(entries)} devices")
    if min_separation is None:
        side = haversine(GeoPoint(deployment.region.sw.lat, deployment.region.sw.lon),
                         GeoPoint(deployment.region.ne.lat, deployment.region.sw.lon))
        min_separation = side / math.sqrt(k) / 2
    best, best_gap = None, -1.0
    for _ in range(tries):
        pick = sorted(rng.choice(len(entries), size=k, replace=False).tolist())
        gap = min((haversine(entries[a].point, entries[b].point)
                   for i, a in enumerate(pick) for b in pick[i + 1:]), default=math.inf)
        if gap >= min_separation:
            return [entries[i].device_id for i in pick]
        if gap > best_gap:
            best, best_gap = pick, gap
    return [entries[i].device_id for i in best]


def write_grid_csv(dest, grid: Grid) -> None:
    cells = grid.cells.ravel()
    write_rows(dest, ["lat", "lon", "value"],
               ((fmt(p.lat), fmt(p.lon), fmt(v)) for p, v in zip(grid.centers(), cells)))


def grid_pgm(grid: Grid, vmin: float | None = None, vmax: float | None = None) -> bytes:
    """Binary 8-bit PGM; pixel = round(255 * (v - vmin) / (vmax - vmin)), clipped.

    ``vmin``/``vmax`` default to the grid's own range and are recorded in a
    header comment. Row 0 is the northern edge.
    """
    lo = float(grid.cells.min()) if vmin is None else vmin
    hi = float(grid.cells.max()) if vmax is None else vmax
    if hi > lo:
        px = np.clip(np.rint(255.0 * (grid.cells - lo) / (hi - lo)), 0, 255)
    else:
        px = np.zeros_like(grid.cells)
    header = f"P5\n# min={fmt(lo)} max={fmt(hi)}\n{grid.nx} {grid.ny}\n255\n".encode()
    return header + px.astype(np.uint8).tobytes()
