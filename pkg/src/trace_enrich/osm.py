"""Streaming reader for OSM XML map extracts."""
from __future__ import annotations

import logging
from xml.parsers import expat

from .errors import EmptyNetwork, ParseError
from .geo import GeoPoint
from .network import (
    FOCUS_TAG_KEYS,
    FocusPointKind,
    HighwayClass,
    RoadNetwork,
    Way,
    focus_kinds_for_node,
)

log = logging.getLogger(__name__)

_KEEP_NODE_TAGS = FOCUS_TAG_KEYS | {"highway", "public_transport", "bus"}


class _Handler:
    def __init__(self, parser, path, bbox):
        self.parser = parser
        self.path = path
        self.bbox = bbox
        self.nodes: dict[int, GeoPoint] = {}
        self.node_tags: dict[int, dict] = {}
        self.ways: list[Way] = []
        self._cur = None  # ("node", id, tags) or ("way", id, refs, tags)

    def fail(self, msg):
        raise ParseError(self.path, self.parser.CurrentLineNumber, msg)

    def _int(self, attrs, key):
        try:
            return int(attrs[key])
        except KeyError:
            self.fail(f"missing attribute {key!r}")
        except ValueError:
            self.fail(f"bad integer {attrs[key]!r} for {key!r}")

    def _float(self, attrs, key):
        try:
            return float(attrs[key])
        except KeyError:
            self.fail(f"missing attribute {key!r}")
        except ValueError:
            self.fail(f"bad number {attrs[key]!r} for {key!r}")

    def start(self, name, attrs):
        if name == "node":
            nid = self._int(attrs, "id")
            lat, lon = self._float(attrs, "lat"), self._float(attrs, "lon")
            try:
                p = GeoPoint(lat, lon)
            except ValueError as exc:
                self.fail(str(exc))
            if self._inside(p):
                self.nodes[nid] = p
            self._cur = ("node", nid, {})
        elif name == "way":
            self._cur = ("way", self._int(attrs, "id"), [], {})
        elif name == "nd":
            if self._cur is None or self._cur[0] != "way":
                self.fail("<nd> outside <way>")
            self._cur[2].append(self._int(attrs, "ref"))
        elif name == "tag":
            if self._cur is not None:
                if "k" not in attrs or "v" not in attrs:
                    self.fail("<tag> needs k and v")
                self._cur[-1][attrs["k"]] = attrs["v"]
        elif name == "relation":
            self._cur = ("relation", None, {})

    def end(self, name):
        if name == "node" and self._cur and self._cur[0] == "node":
            _, nid, tags = self._cur
            kept = {k: v for k, v in tags.items() if k in _KEEP_NODE_TAGS}
            if kept and nid in self.nodes:
                self.node_tags[nid] = kept
            self._cur = None
        elif name == "way" and self._cur and self._cur[0] == "way":
            _, wid, refs, tags = self._cur
            if HighwayClass.from_tag(tags.get("highway")) or tags.get("junction") == "roundabout":
                self.ways.append(Way(wid, tuple(refs), tags))
            self._cur = None
        elif name == "relation":
            self._cur = None

    def _inside(self, p):
        if self.bbox is None:
            return True
        min_lat, min_lon, max_lat, max_lon = self.bbox
        return min_lat <= p.lat <= max_lat and min_lon <= p.lon <= max_lon


def parse_osm(path, bbox=None):
    """Parse nodes, node tags and candidate ways from an OSM XML file.

    Returns ``(nodes, node_tags, ways)``.
    """
    parser = expat.ParserCreate("UTF-8")
    handler = _Handler(parser, path, bbox)
    parser.StartElementHandler = handler.start
    parser.EndElementHandler = handler.end
    parser.buffer_text = True
    try:
        with open(path, "rb") as fh:
            parser.ParseFile(fh)
    except expat.ExpatError as exc:
        raise ParseError(path, exc.lineno, expat.errors.messages[exc.code]) from None
    return handler.nodes, handler.node_tags, handler.ways


def _is_bus_stop(tags):
    return tags.get("highway") == "bus_stop" or (
        tags.get("public_transport") == "platform" and tags.get("bus") == "yes")


def load_osm(path, bbox=None, cell_size_m: float = 100.0, bus_stops=None) -> RoadNetwork:
    """Load a map extract into a :class:`RoadNetwork`.

    ``bbox`` is ``(min_lat, min_lon, max_lat, max_lon)``; nodes outside it are
    dropped and ways are cut where they leave it. Bus stops come from
    ``highway=bus_stop`` nodes unless ``bus_stops`` supplies a catalog.
    """
    nodes, node_tags, ways = parse_osm(path, bbox)
    pois: dict[FocusPointKind, list[GeoPoint]] = {}
    stops = []
    for nid in sorted(node_tags):
        tags = node_tags[nid]
        for kind in focus_kinds_for_node(tags):
            pois.setdefault(kind, []).append(nodes[nid])
        if _is_bus_stop(tags):
            stops.append(nodes[nid])
    for way in sorted(ways, key=lambda w: w.way_id):
        if way.tags.get("junction") != "roundabout":
            continue
        pts = []
        for nid in dict.fromkeys(way.node_ids):
            if nid in nodes:
                pts.append(nodes[nid])
        if pts:
            lat = sum(p.lat for p in pts) / len(pts)
            lon = sum(p.lon for p in pts) / len(pts)
            pois.setdefault(FocusPointKind.ROUNDABOUT, []).append(GeoPoint(lat, lon))
    if bus_stops is not None:
        stops = list(bus_stops)
    drivable = [w for w in ways if HighwayClass.from_tag(w.tags.get("highway"))]
    if not drivable:
        raise EmptyNetwork(f"{path}: no drivable ways")
    net = RoadNetwork.from_ways(nodes, drivable, pois=pois, bus_stops=stops,
                                cell_size_m=cell_size_m)
    log.info("loaded %s: %d edges, %d intersections", path, len(net.edges),
             len(net.intersections))
    return net
