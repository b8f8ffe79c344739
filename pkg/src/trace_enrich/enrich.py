"""Per-record annotations for matched traces.

Speed limits come from the matched edge's tags (direction aware), elevation
from a pluggable provider followed by five-point smoothing and a pairwise
gradient, and infrastructure flags from radius joins against intersections,
bus stops and focus points.
"""
from __future__ import annotations

import abc
import csv
import enum
import logging
import math
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from . import kernels
from .errors import DegenerateSegment, MissingLimit, NoDefault, ParseError, TagParseError
from .geo import GeoPoint, initial_bearing
from .matching import MatchedPoint, MatchStatus
from .network import (MPH_TO_KMH, FocusPointKind, RoadEdge, RoadNetwork, SpeedLimitClass,
                      default_speed_limit)

log = logging.getLogger(__name__)


class TravelDirection(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


def travel_direction(edge_bearing: float, trip_bearing: float) -> TravelDirection:
    """Forward when cos(edge - trip) >= 0. The exact-zero tie maps to Forward."""
    if math.cos(edge_bearing - trip_bearing) >= 0.0:
        return TravelDirection.FORWARD
    return TravelDirection.BACKWARD


def edge_bearing(edge: RoadEdge, offset_m: float) -> float:
    """Bearing of the geometry segment containing ``offset_m``, in the
    edge's digitized direction. Zero-length segments are skipped."""
    i = edge.segment_at(offset_m)
    g = edge.geometry
    order = [i] + [j for k in range(1, len(g)) for j in (i + k, i - k) if 0 <= j < len(g) - 1]
    for j in order:
        if g[j] != g[j + 1]:
            return initial_bearing(g[j], g[j + 1])
    raise DegenerateSegment(f"edge {edge.edge_id} has no non-degenerate segment")


# -- speed limits -------------------------------------------------------------

_SPEED_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(mph|km/h|kmh|kph)?\s*$", re.IGNORECASE)


def parse_speed(raw: str, key: str | None = None) -> float:
    """Tag value to km/h. Bare numbers are km/h."""
    m = _SPEED_RE.match(raw or "")
    if not m:
        raise TagParseError(raw, key)
    value = float(m.group(1))
    if value <= 0:
        raise TagParseError(raw, key)
    unit = (m.group(2) or "").lower()
    return value * MPH_TO_KMH if unit == "mph" else value


@dataclass(frozen=True, slots=True)
class SpeedLimitRecord:
    value_kmh: float
    cls: SpeedLimitClass
    directional_value_kmh: float | None = None

    def __post_init__(self):
        if not self.value_kmh > 0:
            raise ValueError("value_kmh must be positive")
        if self.cls is SpeedLimitClass.DIRECTION_DEPENDENT and self.directional_value_kmh is None:
            raise ValueError("direction-dependent limit needs a directional value")


def speed_limit_for(edge: RoadEdge, direction: TravelDirection) -> SpeedLimitRecord:
    """Limit for travel along ``edge`` in ``direction``.

    Precedence: direction tag for this direction (class -1), ``maxspeed``
    (0), ``maxspeed:advisory`` (2), ``maxspeed:practical`` (3), highway
    default (1).
    """
    tags = edge.tags
    dkey = "maxspeed:forward" if direction is TravelDirection.FORWARD else "maxspeed:backward"
    if dkey in tags:
        directional = parse_speed(tags[dkey], dkey)
        value = parse_speed(tags["maxspeed"], "maxspeed") if "maxspeed" in tags else directional
        return SpeedLimitRecord(value, SpeedLimitClass.DIRECTION_DEPENDENT, directional)
    for key, cls in (("maxspeed", SpeedLimitClass.LEGAL),
                     ("maxspeed:advisory", SpeedLimitClass.ADVISORY),
                     ("maxspeed:practical", SpeedLimitClass.PRACTICAL)):
        if key in tags:
            return SpeedLimitRecord(parse_speed(tags[key], key), cls)
    try:
        return SpeedLimitRecord(default_speed_limit(edge.highway_class), SpeedLimitClass.DEFAULT)
    except NoDefault:
        raise MissingLimit(f"edge {edge.edge_id} has no speed tag and no default") from None


# -- elevation ----------------------------------------------------------------

def smooth_elevation(raw: Sequence[float]) -> list[float]:
    """Five-point moving average; the window is clipped at the series ends."""
    n = len(raw)
    if n == 0:
        raise ValueError("empty elevation series")
    out = []
    for i in range(n):
        window = raw[max(0, i - 2): min(n, i + 3)]
        out.append(math.fsum(window) / len(window))
    return out


def gradient(points: Sequence[tuple[GeoPoint, float]], counters: Counter | None = None) -> list[float]:
    """Pairwise rise over geodesic run; the last record repeats the previous value.

    Equal elevations give exactly 0. Coincident points with unequal
    elevations also give 0 and bump ``counters["coincident_points"]``.
    """
    if len(points) < 2:
        raise ValueError("gradient needs at least two points")
    out = []
    for (p, h), (q, h2) in zip(points, points[1:]):
        if h == h2:
            out.append(0.0)
            continue
        d = kernels.haversine(p.lat, p.lon, q.lat, q.lon)
        if d == 0.0:
            if counters is not None:
                counters["coincident_points"] += 1
            out.append(0.0)
            continue
        out.append((h2 - h) / d)
    out.append(out[-1])
    return out


@dataclass(frozen=True, slots=True)
class ElevationRecord:
    raw_m: float
    smoothed_m: float
    gradient: float


def elevation_key(p: GeoPoint) -> tuple[str, str]:
    return f"{p.lat:.5f}", f"{p.lon:.5f}"


class ElevationProvider(abc.ABC):
    """Meters above sea level for a batch of points (None where unknown)."""

    @abc.abstractmethod
    def elevations(self, points: Sequence[GeoPoint]) -> list[float | None]:
        ...


class FunctionElevation(ElevationProvider):
    """Wraps ``fn(point) -> meters``; handy for synthetic terrain."""

    def __init__(self, fn: Callable[[GeoPoint], float | None]):
        self.fn = fn

    def elevations(self, points):
        return [self.fn(p) for p in points]


class BatchedService(ElevationProvider):
    """Calls ``fetch(batch) -> list of meters`` in chunks with retry/backoff."""

    def __init__(self, fetch: Callable[[list[GeoPoint]], list[float]], batch_size: int = 512,
                 retries: int = 3, backoff_s: float = 1.0, sleep=time.sleep):
        if batch_size < 1 or retries < 0 or backoff_s < 0:
            raise ValueError("invalid batching parameters")
        self.fetch = fetch
        self.batch_size = batch_size
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep

    def elevations(self, points):
        out: list[float | None] = []
        for i in range(0, len(points), self.batch_size):
            batch = list(points[i:i + self.batch_size])
            out.extend(self._fetch_batch(batch))
        return out

    def _fetch_batch(self, batch):
        for attempt in range(self.retries + 1):
            try:
                values = list(self.fetch(batch))
            except Exception as exc:  # service errors are retried, then give up
                if attempt == self.retries:
                    log.warning("elevation batch of %d failed: %s", len(batch), exc)
                    return [None] * len(batch)
                self._sleep(self.backoff_s * 2 ** attempt)
                continue
            if len(values) != len(batch):
                raise ValueError("elevation service returned a wrong-sized batch")
            return values
        return [None] * len(batch)  # pragma: no cover


class ElevationCache(ElevationProvider):
    """CSV-backed cache keyed by 5-decimal coordinates.

    Misses go to ``upstream`` (if any) and are appended to the file. Reads
    may run concurrently; writes are serialized by a lock.
    """

    HEADER = ("lat5", "lon5", "elevation_m")

    def __init__(self, path: str | os.PathLike | None, upstream: ElevationProvider | None = None):
        self.path = path
        self.upstream = upstream
        self._values: dict[tuple[str, str], float] = {}
        self._lock = threading.Lock()
        if path is not None and os.path.exists(path):
            self._load(path)

    def _load(self, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return
            if tuple(header) != self.HEADER:
                raise ParseError(path, 1, f"expected header {','.join(self.HEADER)}")
            for row in reader:
                try:
                    lat5, lon5, h = row
                    self._values[(lat5, lon5)] = float(h)
                except ValueError:
                    raise ParseError(path, reader.line_num, "bad elevation row") from None

    def __len__(self):
        return len(self._values)

    def put(self, p: GeoPoint, meters: float):
        with self._lock:
            self._values[elevation_key(p)] = float(meters)

    def elevations(self, points):
        keys = [elevation_key(p) for p in points]
        missing = sorted({k for k in keys if k not in self._values})
        if missing and self.upstream is not None:
            first = {}
            for k, p in zip(keys, points):
                first.setdefault(k, p)
            fetched = self.upstream.elevations([first[k] for k in missing])
            new = [(k, v) for k, v in zip(missing, fetched) if v is not None]
            with self._lock:
                for k, v in new:
                    self._values.setdefault(k, float(v))
            if new and self.path is not None:
                self._append(new)
        return [self._values.get(k) for k in keys]

    def _append(self, rows):
        with self._lock:
            fresh = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
            with open(self.path, "a", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                if fresh:
                    w.writerow(self.HEADER)
                for (lat5, lon5), v in rows:
                    w.writerow((lat5, lon5, repr(v)))


# -- infrastructure -----------------------------------------------------------

@dataclass(frozen=True)
class Radii:
    intersection_m: float = 5.0
    bus_stop_m: float = 10.0
    focus_m: float = 3.0

    def __post_init__(self):
        for name in ("intersection_m", "bus_stop_m", "focus_m"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"Radii.{name} must be positive")


@dataclass(frozen=True)
class AnnotatedRecord:
    matched: MatchedPoint
    speed_limit: SpeedLimitRecord | None = None
    elevation: ElevationRecord | None = None
    at_intersection: bool = False
    at_bus_stop: bool = False
    focus: frozenset = field(default_factory=frozenset)

    @property
    def any_flag(self) -> bool:
        return self.at_intersection or self.at_bus_stop or bool(self.focus)


def _is_on_road(m: MatchedPoint) -> bool:
    return m.status is not MatchStatus.UNMATCHED and m.snapped is not None


def annotate_infrastructure(trace: Sequence[MatchedPoint], network: RoadNetwork,
                            radii: Radii | None = None) -> list[AnnotatedRecord]:
    """Flag records whose snapped point lies within the radius of a feature."""
    radii = radii or Radii()
    inter, stops, focus = network.feature_indexes()
    out = []
    for m in trace:
        if not _is_on_road(m):
            out.append(AnnotatedRecord(m))
            continue
        p = m.snapped
        kinds = frozenset(FocusPointKind(k) for k, _ in focus.query_radius(p, radii.focus_m))
        out.append(AnnotatedRecord(
            m,
            at_intersection=bool(inter.query_radius(p, radii.intersection_m)),
            at_bus_stop=bool(stops.query_radius(p, radii.bus_stop_m)),
            focus=kinds))
    return out


# -- whole-trip pipeline ------------------------------------------------------

def _trip_bearing(trace: Sequence[MatchedPoint], i: int) -> float | None:
    p = trace[i].snapped
    for j in range(i + 1, len(trace)):
        q = trace[j].snapped if _is_on_road(trace[j]) else None
        if q is not None and q != p:
            return initial_bearing(p, q)
    for j in range(i - 1, -1, -1):
        q = trace[j].snapped if _is_on_road(trace[j]) else None
        if q is not None and q != p:
            return initial_bearing(q, p)
    return None


def direction_at(trace: Sequence[MatchedPoint], i: int, network: RoadNetwork) -> TravelDirection:
    m = trace[i]
    trip = _trip_bearing(trace, i)
    if trip is None:
        return TravelDirection.FORWARD
    return travel_direction(edge_bearing(network.edges[m.edge_id], m.offset_m), trip)


def enrich_trip(trace: Sequence[MatchedPoint], network: RoadNetwork,
                elevation: ElevationProvider | None = None, radii: Radii | None = None,
                counters: Counter | None = None) -> list[AnnotatedRecord]:
    """Speed limit, elevation and infrastructure flags for one matched trip.

    ``counters`` collects data-quality tallies: ``tag_parse_errors``,
    ``missing_limits``, ``elevation_unresolved``, ``coincident_points``.
    """
    counters = counters if counters is not None else Counter()
    records = annotate_infrastructure(trace, network, radii)

    limits: list[SpeedLimitRecord | None] = [None] * len(trace)
    for i, m in enumerate(trace):
        if not _is_on_road(m):
            continue
        try:
            limits[i] = speed_limit_for(network.edges[m.edge_id], direction_at(trace, i, network))
        except TagParseError as exc:
            counters["tag_parse_errors"] += 1
            log.debug("edge %s: %s", m.edge_id, exc)
        except MissingLimit:
            counters["missing_limits"] += 1

    elev: list[ElevationRecord | None] = [None] * len(trace)
    if elevation is not None:
        on_road = [i for i, m in enumerate(trace) if _is_on_road(m)]
        raw = elevation.elevations([trace[i].snapped for i in on_road]) if on_road else []
        heights: dict[int, float] = {}
        for i, h in zip(on_road, raw):
            if h is None or not math.isfinite(h):
                counters["elevation_unresolved"] += 1
            else:
                heights[i] = float(h)
        for run in _runs(sorted(heights)):
            hs = [heights[i] for i in run]
            sm = smooth_elevation(hs)
            if len(run) == 1:
                gs = [0.0]
            else:
                gs = gradient([(trace[i].snapped, h) for i, h in zip(run, sm)], counters)
            for i, h, s, g in zip(run, hs, sm, gs):
                elev[i] = ElevationRecord(h, s, g)

    return [AnnotatedRecord(r.matched, limits[i], elev[i], r.at_intersection, r.at_bus_stop, r.focus)
            for i, r in enumerate(records)]


def _runs(indices: Iterable[int]) -> list[list[int]]:
    runs: list[list[int]] = []
    for i in indices:
        if runs and runs[-1][-1] == i - 1:
            runs[-1].append(i)
        else:
            runs.append([i])
    return runs
