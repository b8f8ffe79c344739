"""Coordinates, spherical distance and bearing, and a grid spatial index.

Angles are radians internally; degrees appear only on :class:`GeoPoint`.
Distances use a sphere of radius 6,371 km.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable

from . import kernels
from .errors import DegenerateSegment

EARTH_RADIUS_M = 6371000.0


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A latitude/longitude pair in degrees.

    Longitude is normalized into (-180, 180]; -180 becomes 180.
    """

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not (-90.0 <= lat <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat!r}")
        if not math.isfinite(lon):
            raise ValueError(f"longitude not finite: {self.lon!r}")
        if not (-180.0 < lon <= 180.0):
            lon = math.fmod(lon, 360.0)
            if lon <= -180.0:
                lon += 360.0
            elif lon > 180.0:
                lon -= 360.0
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


def great_circle_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine distance in meters."""
    return kernels.haversine(a.lat, a.lon, b.lat, b.lon)


def initial_bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle bearing from ``a`` to ``b`` in radians, (-pi, pi].

    Zero points north, pi/2 east. Raises :class:`DegenerateSegment` when the
    two points coincide.
    """
    if a == b:
        raise DegenerateSegment(f"bearing undefined for identical points {a}")
    return kernels.initial_bearing(a.lat, a.lon, b.lat, b.lon)


def destination(origin: GeoPoint, bearing: float, distance_m: float) -> GeoPoint:
    """Point reached after travelling ``distance_m`` along ``bearing``."""
    d = distance_m / EARTH_RADIUS_M
    p1 = math.radians(origin.lat)
    l1 = math.radians(origin.lon)
    p2 = math.asin(math.sin(p1) * math.cos(d)
                   + math.cos(p1) * math.sin(d) * math.cos(bearing))
    l2 = l1 + math.atan2(math.sin(bearing) * math.sin(d) * math.cos(p1),
                         math.cos(d) - math.sin(p1) * math.sin(p2))
    return GeoPoint(math.degrees(p2), math.degrees(l2))


def offset(origin: GeoPoint, east_m: float, north_m: float) -> GeoPoint:
    """Local east/north offset, exact along the resulting bearing."""
    dist = math.hypot(east_m, north_m)
    if dist == 0.0:
        return origin
    return destination(origin, math.atan2(east_m, north_m), dist)


class SpatialIndex:
    """Uniform lat/lon grid over the bounding box of its items.

    Items are points or straight segments (in lat/lon space). A segment is
    registered in every cell its bounding box touches, so the closest point
    of the segment to any query center is always in a visited cell.
    ``query_radius`` is exact: cells are only a prefilter.

    The grid does not wrap across the antimeridian.
    """

    def __init__(self, items: Iterable[tuple], cell_size_m: float = 100.0):
        if cell_size_m <= 0:
            raise ValueError("cell_size_m must be positive")
        self.cell_size_m = float(cell_size_m)
        self._geom: dict[Hashable, tuple[float, float, float, float]] = {}
        for item in items:
            if len(item) == 2:
                key, p = item
                geom = (p.lat, p.lon, p.lat, p.lon)
            else:
                key, a, b = item
                geom = (a.lat, a.lon, b.lat, b.lon)
            if key in self._geom:
                raise ValueError(f"duplicate item id {key!r}")
            self._geom[key] = geom
        self._cells: dict[tuple[int, int], list] = {}
        if not self._geom:
            self._lat0 = self._lon0 = 0.0
            self._dlat = self._dlon = 1.0
            self._nrows = self._ncols = 0
            return
        lats = [g[0] for g in self._geom.values()] + [g[2] for g in self._geom.values()]
        lons = [g[1] for g in self._geom.values()] + [g[3] for g in self._geom.values()]
        self._lat0, lat1 = min(lats), max(lats)
        self._lon0, lon1 = min(lons), max(lons)
        ref = min(max(abs(self._lat0), abs(lat1)), 89.0)
        self._dlat = math.degrees(self.cell_size_m / EARTH_RADIUS_M)
        self._dlon = self._dlat / math.cos(math.radians(ref))
        self._nrows = int((lat1 - self._lat0) // self._dlat) + 1
        self._ncols = int((lon1 - self._lon0) // self._dlon) + 1
        for key, (alat, alon, blat, blon) in self._geom.items():
            r0, r1 = self._rows(min(alat, blat), max(alat, blat))
            c0, c1 = self._cols(min(alon, blon), max(alon, blon))
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    self._cells.setdefault((r, c), []).append(key)

    @classmethod
    def from_points(cls, items, cell_size_m=100.0):
        return cls(((k, p) for k, p in items), cell_size_m)

    @classmethod
    def from_segments(cls, items, cell_size_m=100.0):
        return cls(((k, a, b) for k, a, b in items), cell_size_m)

    def __len__(self):
        return len(self._geom)

    def _rows(self, lo, hi):
        r0 = int(math.floor((lo - self._lat0) / self._dlat))
        r1 = int(math.floor((hi - self._lat0) / self._dlat))
        return max(r0, 0), min(r1, self._nrows - 1)

    def _cols(self, lo, hi):
        c0 = int(math.floor((lo - self._lon0) / self._dlon))
        c1 = int(math.floor((hi - self._lon0) / self._dlon))
        return max(c0, 0), min(c1, self._ncols - 1)

    def candidates(self, center: GeoPoint, radius: float) -> set:
        """Superset of the items within ``radius`` meters of ``center``."""
        if not self._geom:
            return set()
        ang = radius / EARTH_RADIUS_M
        eps = 1e-9
        dlat = math.degrees(ang) + eps
        lat_lo, lat_hi = center.lat - dlat, center.lat + dlat
        r0, r1 = self._rows(lat_lo, lat_hi)
        phi = max(abs(lat_lo), abs(lat_hi))
        s = math.sin(ang / 2.0) / math.cos(math.radians(phi)) if phi < 90.0 else 2.0
        if s >= 1.0:
            c0, c1 = 0, self._ncols - 1
        else:
            dlon = math.degrees(2.0 * math.asin(s)) + eps
            c0, c1 = self._cols(center.lon - dlon, center.lon + dlon)
        if r0 > r1 or c0 > c1:
            return set()
        out = set()
        if (r1 - r0 + 1) * (c1 - c0 + 1) > len(self._cells):
            for (r, c), keys in self._cells.items():
                if r0 <= r <= r1 and c0 <= c <= c1:
                    out.update(keys)
        else:
            cells = self._cells
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    keys = cells.get((r, c))
                    if keys:
                        out.update(keys)
        return out

    def distance_to(self, key, center: GeoPoint) -> float:
        alat, alon, blat, blon = self._geom[key]
        if alat == blat and alon == blon:
            return kernels.haversine(center.lat, center.lon, alat, alon)
        return kernels.project_segment(center.lat, center.lon, alat, alon, blat, blon)[3]

    def query_radius(self, center: GeoPoint, radius: float) -> set:
        """Ids of the items whose distance to ``center`` is at most ``radius``."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        return {k for k in self.candidates(center, radius)
                if self.distance_to(k, center) <= radius}


def query_radius(index: SpatialIndex, center: GeoPoint, radius: float) -> set:
    return index.query_radius(center, radius)
