"""Geographic primitives shared by the simulator and the analytics."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0
# metres per degree of latitude on the mean sphere
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


class DomainError(ValueError):
    """Input outside the domain an operation is defined on."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise DomainError(f"invalid coordinates ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned lat/lon box given by its south-west and north-east corners."""

    sw: GeoPoint
    ne: GeoPoint

    def __post_init__(self):
        if not (self.sw.lat < self.ne.lat and self.sw.lon < self.ne.lon):
            raise DomainError("degenerate bbox")

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.sw.lat + self.ne.lat) / 2, (self.sw.lon + self.ne.lon) / 2)

    def contains(self, p: GeoPoint, tol: float = 1e-9) -> bool:
        return (self.sw.lat - tol <= p.lat <= self.ne.lat + tol
                and self.sw.lon - tol <= p.lon <= self.ne.lon + tol)

    @classmethod
    def square(cls, center: GeoPoint, side_m: float) -> "BBox":
        """Box of roughly ``side_m`` x ``side_m`` metres around ``center``."""
        half_lat = side_m / 2 / M_PER_DEG
        half_lon = side_m / 2 / (M_PER_DEG * math.cos(math.radians(center.lat)))
        return cls(GeoPoint(center.lat - half_lat, center.lon - half_lon),
                   GeoPoint(center.lat + half_lat, center.lon + half_lon))


def haversine(p1: GeoPoint, p2: GeoPoint) -> float:
    """Great-circle distance in metres."""
    lat1 = math.radians(p1.lat)
    lat2 = math.radians(p2.lat)
    dlat = lat2 - lat1
    dlon = math.radians(p2.lon) - math.radians(p1.lon)
    a = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, a)))


def local_xy(origin: GeoPoint, lat, lon):
    """Equirectangular east/north offsets in metres from ``origin``.

    Works on scalars or numpy arrays. Only used for the field's texture
    coordinates, where a few mm of distortion over 2 km is irrelevant.
    """
    x = (lon - origin.lon) * M_PER_DEG * math.cos(math.radians(origin.lat))
    y = (lat - origin.lat) * M_PER_DEG
    return x, y


def cell_centers(bbox: BBox, nx: int, ny: int) -> list[GeoPoint]:
    """Centres of an nx x ny raster over ``bbox``, row-major, row 0 at the north edge."""
    dlat = (bbox.ne.lat - bbox.sw.lat) / ny
    dlon = (bbox.ne.lon - bbox.sw.lon) / nx
    return [GeoPoint(bbox.ne.lat - (r + 0.5) * dlat, bbox.sw.lon + (c + 0.5) * dlon)
            for r in range(ny) for c in range(nx)]
