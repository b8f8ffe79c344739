"""Synthetic grid maps and noisy trips with known ground truth.

Used by the benchmark and the test suite; also handy for trying the CLI
without real data.
"""
from __future__ import annotations

import csv
import math
import random
from pathlib import Path
from dataclasses import dataclass
from xml.sax.saxutils import quoteattr

from .geo import GeoPoint, offset
from .network import RoadNetwork, Way

ANN_ARBOR = GeoPoint(42.28, -83.74)


def grid_nodes(rows, cols, spacing_m, origin=ANN_ARBOR):
    """Node id -> position for a rows x cols lattice (ids start at 1)."""
    return {r * cols + c + 1: offset(origin, c * spacing_m, r * spacing_m)
            for r in range(rows) for c in range(cols)}


def grid_ways(rows, cols, tags=None):
    tags = dict(tags or {"highway": "residential"})
    ways = [Way(1000 + r, tuple(r * cols + c + 1 for c in range(cols)), tags)
            for r in range(rows)]
    ways += [Way(2000 + c, tuple(r * cols + c + 1 for r in range(rows)), tags)
             for c in range(cols)]
    return ways


def grid_network(rows=5, cols=5, spacing_m=200.0, origin=ANN_ARBOR, tags=None, **kw):
    return RoadNetwork.from_ways(grid_nodes(rows, cols, spacing_m, origin),
                                 grid_ways(rows, cols, tags), **kw)


def osm_xml(nodes, ways, node_tags=None):
    """Serialize nodes/ways to OSM XML text."""
    node_tags = node_tags or {}
    out = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6">']
    for nid, p in sorted(nodes.items()):
        tags = node_tags.get(nid)
        if tags:
            out.append(f'  <node id="{nid}" lat="{p.lat!r}" lon="{p.lon!r}">')
            for k, v in tags.items():
                out.append(f"    <tag k={quoteattr(k)} v={quoteattr(v)}/>")
            out.append("  </node>")
        else:
            out.append(f'  <node id="{nid}" lat="{p.lat!r}" lon="{p.lon!r}"/>')
    for w in ways:
        out.append(f'  <way id="{w.way_id}">')
        out.extend(f'    <nd ref="{n}"/>' for n in w.node_ids)
        out.extend(f"    <tag k={quoteattr(k)} v={quoteattr(v)}/>" for k, v in w.tags.items())
        out.append("  </way>")
    out.append("</osm>")
    return "\n".join(out) + "\n"


@dataclass
class SyntheticTrip:
    points: list[GeoPoint]        # observed (noisy)
    truth: list[GeoPoint]         # noiseless positions
    edges: list[int]              # ground-truth edge id per point
    timestamps_ms: list[int]


def random_walk_trip(network: RoadNetwork, rng: random.Random, n_points=100,
                     step_m=15.0, noise_m=5.0, dt_ms=1000) -> SyntheticTrip:
    """Drive a random non-backtracking walk and sample it every ``step_m``.

    The next edge at each node is uniform among the non-backtracking
    choices. Assumes two-way edges. Noise is isotropic Gaussian with
    standard deviation ``noise_m`` per axis.
    """
    by_nodes = {}
    for e in network.edges:
        by_nodes[(e.start_node, e.end_node)] = (e.edge_id, True)
        by_nodes[(e.end_node, e.start_node)] = (e.edge_id, False)
    nbrs = {}
    for (u, v) in by_nodes:
        nbrs.setdefault(u, []).append(v)
    for v in nbrs.values():
        v.sort()
    node = rng.choice(sorted(nbrs))
    prev = None
    pos = rng.uniform(0, step_m)
    out_pts, truth, edges, ts = [], [], [], []
    while len(out_pts) < n_points:
        choices = [v for v in nbrs[node] if v != prev] or nbrs[node]
        nxt = rng.choice(choices)
        edge_id, fwd = by_nodes[(node, nxt)]
        e = network.edges[edge_id]
        while pos <= e.length and len(out_pts) < n_points:
            p = e.point_at(pos if fwd else e.length - pos)
            truth.append(p)
            edges.append(edge_id)
            out_pts.append(offset(p, rng.gauss(0, noise_m), rng.gauss(0, noise_m)))
            ts.append(len(ts) * dt_ms)
            pos += step_m
        pos -= e.length
        prev, node = node, nxt
    return SyntheticTrip(out_pts, truth, edges, ts)


def parallel_roads(spacing_m=15.0, length_m=400.0, origin=ANN_ARBOR, connect=True):
    """Two parallel east-west roads, optionally joined at both ends.

    The true road is way 1 (south); way 2 lies ``spacing_m`` north of it.
    """
    nodes = {
        1: origin,
        2: offset(origin, length_m, 0),
        3: offset(origin, 0, spacing_m),
        4: offset(origin, length_m, spacing_m),
    }
    tags = {"highway": "residential"}
    ways = [Way(1, (1, 2), tags), Way(2, (3, 4), tags)]
    if connect:
        ways += [Way(3, (1, 3), tags), Way(4, (2, 4), tags)]
    return nodes, ways


def terrain_elevation(p: GeoPoint) -> float:
    """Smooth rolling terrain around 260 m, deterministic in the position."""
    return 260.0 + 8.0 * math.sin(p.lat * 900.0) + 5.0 * math.cos(p.lon * 700.0)


def demo_map(directory, rows=6, cols=6, spacing_m=200.0) -> Path:
    """Write a small tagged grid extract and return its path.

    Row 0 carries direction-dependent limits, column 0 a legal limit, the
    rest default residential limits. A crossing, a traffic signal and a bus
    stop sit beside the roads.
    """
    nodes = grid_nodes(rows, cols, spacing_m)
    ways = []
    for w in grid_ways(rows, cols):
        tags = dict(w.tags)
        if w.way_id == 1000:
            tags.update({"highway": "primary", "maxspeed:forward": "40 mph",
                         "maxspeed:backward": "30 mph"})
        elif w.way_id == 2000:
            tags.update({"highway": "tertiary", "maxspeed": "35 mph"})
        ways.append(Way(w.way_id, w.node_ids, tags))
    extra = {
        90001: (offset(ANN_ARBOR, spacing_m / 2, 1.0), {"highway": "crossing"}),
        90002: (offset(ANN_ARBOR, 1.0, spacing_m), {"highway": "traffic_signals"}),
        90003: (offset(ANN_ARBOR, spacing_m * 1.5, spacing_m + 6.0), {"highway": "bus_stop"}),
    }
    node_tags = {}
    for nid, (p, tags) in extra.items():
        nodes[nid] = p
        node_tags[nid] = tags
    path = Path(directory) / "demo_map.osm"
    path.write_text(osm_xml(nodes, ways, node_tags), encoding="utf-8")
    return path


def demo_trips(directory, n_trips=6, points_per_trip=300, seed=0, rows=6, cols=6,
               spacing_m=200.0, noise_m=4.0) -> Path:
    """Write a VED-style trips CSV driven on the :func:`demo_map` grid.

    Energy per record is ``rate(speed) * dt`` with a convex rate curve.
    """
    rng = random.Random(seed)
    net = grid_network(rows, cols, spacing_m)
    path = Path(directory) / "demo_trips.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("DayNum", "VehId", "Trip", "Timestamp_ms", "Latitude", "Longitude",
                    "VehicleSpeed_kmh", "energy"))
        for k in range(n_trips):
            veh, trip = 100 + k % 3, 1000 + k
            step = rng.uniform(6.0, 14.0)
            t = random_walk_trip(net, rng, points_per_trip, step_m=step, noise_m=noise_m)
            day = 1 + k + rng.uniform(0.25, 0.75)
            for i, (p, ms) in enumerate(zip(t.points, t.timestamps_ms)):
                v = max(0.0, step * 3.6 + rng.gauss(0, 1.5))
                if i and rng.random() < 0.05:  # logger repeats the last fix
                    p = t.points[i - 1]
                w.writerow((repr(day + ms / 86_400_000), veh, trip, ms, repr(p.lat), repr(p.lon),
                            repr(round(v, 2)), repr(round((0.5 + (v / 40) ** 2), 6))))
    return path


def prefill_elevation_cache(cache_path, matched_csvs, fn=terrain_elevation) -> int:
    """Store ``fn`` elevations for every snapped point in matched CSVs.

    Stands in for a live elevation service when trying the pipeline
    offline. Returns the number of cached keys.
    """
    from .enrich import ElevationCache, FunctionElevation
    cache = ElevationCache(cache_path, FunctionElevation(fn))
    for path in matched_csvs:
        with open(path, newline="", encoding="utf-8") as fh:
            pts = [GeoPoint(float(r["MatchedLatitude"]), float(r["MatchedLongitude"]))
                   for r in csv.DictReader(fh) if r["MatchedLatitude"]]
        cache.elevations(pts)
    return len(cache)
