"""Routable road graph, point features, and default speed limits."""
from __future__ import annotations

import bisect
import csv
import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import EmptyNetwork, NoDefault, ParseError
from .geo import GeoPoint, SpatialIndex

log = logging.getLogger(__name__)

MPH_TO_KMH = 1.609344


class HighwayClass(str, enum.Enum):
    MOTORWAY = "motorway"
    TRUNK = "trunk"
    PRIMARY = "primary"
    SECONDARY = "secondary"
    TERTIARY = "tertiary"
    UNCLASSIFIED = "unclassified"
    RESIDENTIAL = "residential"
    SERVICE = "service"
    OTHER = "other"

    @classmethod
    def from_tag(cls, value: str | None) -> "HighwayClass | None":
        """Drivable class for a ``highway`` tag value, or None if not drivable."""
        if not value:
            return None
        if value.endswith("_link"):
            value = value[: -len("_link")]
        try:
            hc = cls(value)
        except ValueError:
            return None
        return None if hc is cls.OTHER else hc


# Posted defaults when a way has no speed tag, in mph.
DEFAULT_LIMITS_MPH = {
    HighwayClass.MOTORWAY: 70,
    HighwayClass.TRUNK: 55,
    HighwayClass.PRIMARY: 55,
    HighwayClass.SECONDARY: 45,
    HighwayClass.TERTIARY: 35,
    HighwayClass.UNCLASSIFIED: 55,
    HighwayClass.RESIDENTIAL: 25,
    HighwayClass.SERVICE: 25,
}


def default_speed_limit(highway_class: HighwayClass | str) -> float:
    """Default speed limit in km/h for a highway class."""
    hc = HighwayClass(highway_class)
    try:
        return DEFAULT_LIMITS_MPH[hc] * MPH_TO_KMH
    except KeyError:
        raise NoDefault(f"no default speed limit for highway class {hc.value!r}") from None


class SpeedLimitClass(enum.IntEnum):
    DIRECTION_DEPENDENT = -1
    LEGAL = 0
    DEFAULT = 1
    ADVISORY = 2
    PRACTICAL = 3


class FocusPointKind(str, enum.Enum):
    BOLLARD = "bollard"
    BUMP = "bump"
    CROSSING = "crossing"
    GATE = "gate"
    LIFT_GATE = "lift_gate"
    GIVE_WAY = "give_way"
    HUMP = "hump"
    LEVEL_CROSSING = "level_crossing"
    MINI_ROUNDABOUT = "mini_roundabout"
    MOTORWAY_JUNCTION = "motorway_junction"
    ROUNDABOUT = "roundabout"
    STOP_SIGN = "stop_sign"
    SWING_GATE = "swing_gate"
    TRAFFIC_SIGNAL = "traffic_signal"
    TURNING_CIRCLE = "turning_circle"
    TURNING_LOOP = "turning_loop"


_NODE_FOCUS_TAGS = {
    ("highway", "crossing"): FocusPointKind.CROSSING,
    ("highway", "traffic_signals"): FocusPointKind.TRAFFIC_SIGNAL,
    ("highway", "stop"): FocusPointKind.STOP_SIGN,
    ("highway", "give_way"): FocusPointKind.GIVE_WAY,
    ("highway", "turning_circle"): FocusPointKind.TURNING_CIRCLE,
    ("highway", "turning_loop"): FocusPointKind.TURNING_LOOP,
    ("highway", "mini_roundabout"): FocusPointKind.MINI_ROUNDABOUT,
    ("highway", "motorway_junction"): FocusPointKind.MOTORWAY_JUNCTION,
    ("railway", "level_crossing"): FocusPointKind.LEVEL_CROSSING,
    ("traffic_calming", "bump"): FocusPointKind.BUMP,
    ("traffic_calming", "hump"): FocusPointKind.HUMP,
    ("barrier", "gate"): FocusPointKind.GATE,
    ("barrier", "lift_gate"): FocusPointKind.LIFT_GATE,
    ("barrier", "bollard"): FocusPointKind.BOLLARD,
    ("barrier", "swing_gate"): FocusPointKind.SWING_GATE,
}

FOCUS_TAG_KEYS = frozenset(k for k, _ in _NODE_FOCUS_TAGS)


def focus_kinds_for_node(tags: Mapping[str, str]) -> list[FocusPointKind]:
    """Focus-point kinds carried by a node's tags; unknown values are ignored."""
    kinds = []
    for key in ("highway", "railway", "traffic_calming", "barrier"):
        kind = _NODE_FOCUS_TAGS.get((key, tags.get(key)))
        if kind is not None:
            kinds.append(kind)
    return kinds


@dataclass(frozen=True)
class Way:
    """A raw map way: ordered node references plus tags."""

    way_id: int
    node_ids: tuple[int, ...]
    tags: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class RoadEdge:
    """A drivable stretch of one way between two graph nodes."""

    edge_id: int
    way_id: int
    geometry: tuple[GeoPoint, ...]
    highway_class: HighwayClass
    tags: Mapping[str, str]
    start_node: int
    end_node: int
    cumulative: tuple[float, ...] = field(repr=False)

    @property
    def length(self) -> float:
        return self.cumulative[-1]

    @property
    def forward_allowed(self) -> bool:
        return self.tags.get("oneway") not in ("-1", "reverse")

    @property
    def backward_allowed(self) -> bool:
        ow = self.tags.get("oneway")
        if ow in ("yes", "true", "1"):
            return False
        if ow is None and self.tags.get("junction") == "roundabout":
            return False
        return True

    @property
    def lats(self):
        return [p.lat for p in self.geometry]

    @property
    def lons(self):
        return [p.lon for p in self.geometry]

    def segment_at(self, offset_m: float) -> int:
        """Index of the geometry segment containing ``offset_m``."""
        i = bisect.bisect_right(self.cumulative, offset_m) - 1
        return min(max(i, 0), len(self.geometry) - 2)

    def point_at(self, offset_m: float) -> GeoPoint:
        i = self.segment_at(offset_m)
        seg_len = self.cumulative[i + 1] - self.cumulative[i]
        t = 0.0 if seg_len == 0 else (offset_m - self.cumulative[i]) / seg_len
        t = min(max(t, 0.0), 1.0)
        a, b = self.geometry[i], self.geometry[i + 1]
        return GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))


def make_edge(edge_id, way_id, geometry, highway_class, tags, start_node, end_node) -> RoadEdge:
    cum = [0.0]
    for a, b in zip(geometry, geometry[1:]):
        cum.append(cum[-1] + kernels.haversine(a.lat, a.lon, b.lat, b.lon))
    return RoadEdge(edge_id, way_id, tuple(geometry), HighwayClass(highway_class),
                    dict(tags), start_node, end_node, tuple(cum))


class Candidate(NamedTuple):
    edge_id: int
    point: GeoPoint
    distance: float
    offset: float


class RoadNetwork:
    """Immutable routable graph plus point-feature layers.

    Build with :meth:`from_ways` (or :func:`trace_enrich.osm.load_osm`).
    Graph nodes are addressed by their map node id.
    """

    def __init__(self, edges: Sequence[RoadEdge], node_coords: Mapping[int, GeoPoint],
                 node_ways: Mapping[int, frozenset], pois=None, bus_stops=(),
                 cell_size_m: float = 100.0):
        if not edges:
            raise EmptyNetwork("network has no drivable edges")
        self.edges: tuple[RoadEdge, ...] = tuple(edges)
        for i, e in enumerate(self.edges):
            if e.edge_id != i:
                raise ValueError("edge ids must be 0..n-1 in order")
        self.node_coords = dict(node_coords)
        self.node_ways = {n: frozenset(w) for n, w in node_ways.items()}
        adjacency = defaultdict(list)
        for e in self.edges:
            adjacency[e.start_node].append(e.edge_id)
            if e.end_node != e.start_node:
                adjacency[e.end_node].append(e.edge_id)
        self.adjacency = {n: tuple(v) for n, v in sorted(adjacency.items())}
        self.intersection_nodes = frozenset(
            n for n, ways in self.node_ways.items() if len(ways) >= 2)
        self.intersections = frozenset(self.node_coords[n] for n in self.intersection_nodes)
        self.pois = {k: tuple(v) for k, v in (pois or {}).items() if v}
        self.bus_stops = tuple(bus_stops)
        self.cell_size_m = cell_size_m
        self.edge_index = SpatialIndex.from_segments(
            (((e.edge_id, i), a, b)
             for e in self.edges
             for i, (a, b) in enumerate(zip(e.geometry, e.geometry[1:]))),
            cell_size_m)
        self._build_csr()
        self._feature_indexes = None

    @classmethod
    def from_ways(cls, nodes: Mapping[int, GeoPoint], ways: Iterable[Way],
                  pois=None, bus_stops=(), cell_size_m: float = 100.0) -> "RoadNetwork":
        """Split drivable ways at graph nodes and build the network.

        Graph nodes are way endpoints, nodes used by two or more drivable
        ways, and nodes repeated inside one way. References to unknown nodes
        cut the way. Non-drivable ways are ignored.
        """
        runs = []
        for way in sorted(ways, key=lambda w: w.way_id):
            hc = HighwayClass.from_tag(way.tags.get("highway"))
            if hc is None:
                continue
            run = []
            for nid in way.node_ids:
                if nid in nodes:
                    if run and run[-1] == nid:
                        continue
                    run.append(nid)
                else:
                    if len(run) >= 2:
                        runs.append((way, hc, run))
                    run = []
            if len(run) >= 2:
                runs.append((way, hc, run))

        node_ways = defaultdict(set)
        for way, _, run in runs:
            for nid in run:
                node_ways[nid].add(way.way_id)
        split = set()
        for way, _, run in runs:
            split.add(run[0])
            split.add(run[-1])
            seen = set()
            for nid in run:
                if nid in seen or len(node_ways[nid]) >= 2:
                    split.add(nid)
                seen.add(nid)

        edges = []
        for way, hc, run in runs:
            start = 0
            for i in range(1, len(run)):
                if run[i] in split or i == len(run) - 1:
                    ids = run[start:i + 1]
                    geom = [nodes[n] for n in ids]
                    edge = make_edge(len(edges), way.way_id, geom, hc, way.tags, ids[0], ids[-1])
                    if edge.length > 0:
                        edges.append(edge)
                    else:
                        log.warning("dropping zero-length edge of way %s", way.way_id)
                    start = i
        used = {n for e in edges for n in (e.start_node, e.end_node)} | set(node_ways)
        coords = {n: nodes[n] for n in used}
        return cls(edges, coords, node_ways, pois=pois, bus_stops=bus_stops,
                   cell_size_m=cell_size_m)

    # graph -----------------------------------------------------------------

    def _build_csr(self):
        ids = sorted({n for e in self.edges for n in (e.start_node, e.end_node)})
        self.node_index = {n: i for i, n in enumerate(ids)}
        arcs = []
        for e in self.edges:
            u, v = self.node_index[e.start_node], self.node_index[e.end_node]
            if e.forward_allowed:
                arcs.append((u, v, e.length))
            if e.backward_allowed:
                arcs.append((v, u, e.length))
        arcs.sort(key=lambda a: (a[0], a[1], a[2]))
        indptr = np.zeros(len(ids) + 1, dtype=np.intp)
        for u, _, _ in arcs:
            indptr[u + 1] += 1
        np.cumsum(indptr, out=indptr)
        self.csr = (indptr,
                    np.array([a[1] for a in arcs], dtype=np.intp),
                    np.array([a[2] for a in arcs], dtype=np.float64))

    def router(self):
        """A fresh shortest-path workspace over this graph."""
        return kernels.Dijkstra(*self.csr)

    # spatial queries --------------------------------------------------------

    def nearest_edges(self, p: GeoPoint, radius: float) -> list[Candidate]:
        """Closest point of every edge within ``radius`` meters of ``p``.

        Sorted by distance, then edge id.
        """
        if radius <= 0:
            raise ValueError("radius must be positive")
        per_edge = defaultdict(list)
        for edge_id, seg in self.edge_index.candidates(p, radius):
            per_edge[edge_id].append(seg)
        out = []
        for edge_id, segs in per_edge.items():
            e = self.edges[edge_id]
            geom = e.geometry
            best = None
            for seg in sorted(segs):
                a, b = geom[seg], geom[seg + 1]
                t, qlat, qlon, d = kernels.project_segment(p.lat, p.lon, a.lat, a.lon, b.lat, b.lon)
                if best is None or d < best[0]:
                    best = (d, seg, qlat, qlon)
            d, seg, qlat, qlon = best
            if d <= radius:
                a = geom[seg]
                off = e.cumulative[seg] + kernels.haversine(a.lat, a.lon, qlat, qlon)
                out.append(Candidate(edge_id, GeoPoint(qlat, qlon), d, min(off, e.length)))
        out.sort(key=lambda c: (c.distance, c.edge_id))
        return out

    def feature_indexes(self):
        """Spatial indexes over intersections, bus stops and focus points."""
        if self._feature_indexes is None:
            inter = SpatialIndex.from_points(
                ((n, self.node_coords[n]) for n in sorted(self.intersection_nodes)),
                self.cell_size_m)
            stops = SpatialIndex.from_points(enumerate(self.bus_stops), self.cell_size_m)
            focus = SpatialIndex.from_points(
                (((kind, i), p) for kind, pts in sorted(self.pois.items())
                 for i, p in enumerate(pts)),
                self.cell_size_m)
            self._feature_indexes = (inter, stops, focus)
        return self._feature_indexes

    def canonical(self):
        """Order-independent summary used for equality checks."""
        return (
            tuple((e.way_id, tuple((p.lat, p.lon) for p in e.geometry), e.highway_class.value,
                   tuple(sorted(e.tags.items()))) for e in self.edges),
            tuple(sorted((p.lat, p.lon) for p in self.intersections)),
            tuple((k.value, tuple(sorted((p.lat, p.lon) for p in v)))
                  for k, v in sorted(self.pois.items())),
            tuple(sorted((p.lat, p.lon) for p in self.bus_stops)),
        )


def derive_intersections(network: RoadNetwork) -> frozenset:
    """Coordinates of every node shared by two or more distinct drivable ways."""
    return network.intersections


def nearest_edges(network: RoadNetwork, p: GeoPoint, radius: float) -> list[Candidate]:
    return network.nearest_edges(p, radius)


def load_bus_stops_csv(path) -> list[GeoPoint]:
    """Read an external stop catalog with header ``stop_id,lat,lon``."""
    stops = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"stop_id", "lat", "lon"} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(path, 1, f"missing columns: {', '.join(sorted(missing))}")
        for row in reader:
            try:
                stops.append(GeoPoint(float(row["lat"]), float(row["lon"])))
            except (TypeError, ValueError) as exc:
                raise ParseError(path, reader.line_num, str(exc)) from None
    return stops
