import math
import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from oracles import brute_flags
from trace_enrich.enrich import (
    AnnotatedRecord,
    BatchedService,
    ElevationCache,
    FunctionElevation,
    Radii,
    SpeedLimitRecord,
    TravelDirection,
    annotate_infrastructure,
    edge_bearing,
    enrich_trip,
    gradient,
    parse_speed,
    smooth_elevation,
    speed_limit_for,
    travel_direction,
)
from trace_enrich.errors import MissingLimit, ParseError, TagParseError
from trace_enrich.geo import GeoPoint, destination, great_circle_distance, offset
from trace_enrich.matching import MatchedPoint, MatchStatus
from trace_enrich.network import (
    FocusPointKind,
    HighwayClass,
    RoadNetwork,
    SpeedLimitClass,
    Way,
    make_edge,
)
from trace_enrich.synthetic import ANN_ARBOR

F, B = TravelDirection.FORWARD, TravelDirection.BACKWARD


class TestTravelDirection:
    def test_same(self):
        assert travel_direction(1.0, 1.0) is F

    def test_opposite(self):
        assert travel_direction(1.0, 1.0 + math.pi) is B

    def test_sixty_degrees(self):
        assert travel_direction(0.0, math.pi / 3) is F

    def test_tie_is_forward(self, monkeypatch):
        import trace_enrich.enrich as en
        monkeypatch.setattr(en.math, "cos", lambda x: 0.0)
        assert travel_direction(0.0, 1.0) is F

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_flip(self, a, b):
        if abs(math.cos(a - b)) > 1e-9:
            assert travel_direction(a, b) is not travel_direction(a, b + math.pi)


def edge_with(tags, hc="residential", reverse=False):
    geom = [ANN_ARBOR, offset(ANN_ARBOR, 0, 100)]
    if reverse:
        geom = geom[::-1]
    return make_edge(0, 1, geom, hc, tags, 1, 2)


class TestParseSpeed:
    @pytest.mark.parametrize("raw, kmh", [
        ("50", 50.0), ("50 km/h", 50.0), ("45 mph", 72.42048), ("45mph", 72.42048),
        ("30.5", 30.5), ("70 mph", 112.65408)])
    def test_values(self, raw, kmh):
        assert parse_speed(raw) == pytest.approx(kmh, abs=1e-9)

    @pytest.mark.parametrize("raw", ["signals", "", "none", "50;30", "-5", "0"])
    def test_bad(self, raw):
        with pytest.raises(TagParseError) as ei:
            parse_speed(raw, "maxspeed")
        assert ei.value.raw == raw


class TestSpeedLimit:
    # (tags, highway, direction, value, class, directional)
    TABLE = [
        ({"maxspeed:forward": "50 mph", "maxspeed:backward": "35 mph"}, "primary", B,
         56.32704, SpeedLimitClass.DIRECTION_DEPENDENT, 56.32704),
        ({"maxspeed:forward": "50 mph", "maxspeed:backward": "35 mph"}, "primary", F,
         80.4672, SpeedLimitClass.DIRECTION_DEPENDENT, 80.4672),
        ({"maxspeed": "40 mph", "maxspeed:forward": "50 mph"}, "primary", F,
         64.37376, SpeedLimitClass.DIRECTION_DEPENDENT, 80.4672),
        ({"maxspeed": "40 mph", "maxspeed:forward": "50 mph"}, "primary", B,
         64.37376, SpeedLimitClass.LEGAL, None),
        ({"maxspeed": "45 mph"}, "residential", F, 72.42048, SpeedLimitClass.LEGAL, None),
        ({"maxspeed:advisory": "20 mph"}, "residential", F, 32.18688, SpeedLimitClass.ADVISORY, None),
        ({"maxspeed:practical": "30"}, "residential", F, 30.0, SpeedLimitClass.PRACTICAL, None),
        ({"maxspeed": "60", "maxspeed:advisory": "40"}, "tertiary", F, 60.0, SpeedLimitClass.LEGAL, None),
        ({"maxspeed:advisory": "40", "maxspeed:practical": "30"}, "tertiary", F, 40.0,
         SpeedLimitClass.ADVISORY, None),
        ({}, "residential", F, 40.2336, SpeedLimitClass.DEFAULT, None),
        ({}, "motorway", B, 112.65408, SpeedLimitClass.DEFAULT, None),
        ({}, "trunk", F, 88.51392, SpeedLimitClass.DEFAULT, None),
    ]

    @pytest.mark.parametrize("tags, hc, d, value, cls, directional", TABLE)
    def test_table(self, tags, hc, d, value, cls, directional):
        rec = speed_limit_for(edge_with(tags, hc), d)
        assert rec.cls is cls
        assert rec.value_kmh == pytest.approx(value, abs=1e-9)
        if directional is None:
            assert rec.directional_value_kmh is None
        else:
            assert rec.directional_value_kmh == pytest.approx(directional, abs=1e-9)

    def test_seventy_mph(self):
        rec = speed_limit_for(edge_with({}, "motorway"), F)
        assert abs(rec.value_kmh - 112.65) <= 0.01

    def test_unparsable(self):
        with pytest.raises(TagParseError):
            speed_limit_for(edge_with({"maxspeed": "walk"}), F)

    def test_missing_default(self):
        e = edge_with({})
        object.__setattr__(e, "highway_class", HighwayClass.OTHER)
        with pytest.raises(MissingLimit):
            speed_limit_for(e, F)

    def test_record_invariants(self):
        with pytest.raises(ValueError):
            SpeedLimitRecord(0.0, SpeedLimitClass.LEGAL)
        with pytest.raises(ValueError):
            SpeedLimitRecord(50.0, SpeedLimitClass.DIRECTION_DEPENDENT)

    def test_reversed_geometry_flips_directional(self):
        tags = {"maxspeed:forward": "50 mph", "maxspeed:backward": "35 mph"}
        north = 0.0  # trip heads north in both cases
        got = []
        for rev in (False, True):
            e = edge_with(tags, "primary", reverse=rev)
            d = travel_direction(edge_bearing(e, 50.0), north)
            got.append((d, speed_limit_for(e, d).directional_value_kmh))
        assert got[0] == (F, pytest.approx(80.4672))
        assert got[1] == (B, pytest.approx(56.32704))


class TestSmoothing:
    def test_constant(self):
        assert smooth_elevation([10.0] * 5) == [10.0] * 5

    def test_spike(self):
        assert smooth_elevation([0, 0, 10, 0, 0])[2] == 2.0

    def test_short_series_clipped_window(self):
        # every clipped window of a length-3 series covers all three values
        assert smooth_elevation([1, 2, 3]) == [2.0, 2.0, 2.0]

    def test_boundaries(self):
        raw = [1.0, 4.0, 9.0, 16.0, 25.0, 36.0]
        out = smooth_elevation(raw)
        assert out[0] == pytest.approx((1 + 4 + 9) / 3)
        assert out[1] == pytest.approx((1 + 4 + 9 + 16) / 4)
        assert out[-1] == pytest.approx((16 + 25 + 36) / 3)

    @given(st.lists(st.floats(-500, 5000), min_size=5, max_size=60))
    def test_interior_is_five_term_mean(self, raw):
        out = smooth_elevation(raw)
        assert len(out) == len(raw)
        for i in range(2, len(raw) - 2):
            assert out[i] == math.fsum(raw[i - 2:i + 3]) / 5

    def test_empty(self):
        with pytest.raises(ValueError):
            smooth_elevation([])


def meridian(n, d, start=ANN_ARBOR):
    return [destination(start, 0.0, i * d) for i in range(n)]


class TestGradient:
    def test_flat(self):
        pts = meridian(20, 7.0)
        assert gradient([(p, 250.0) for p in pts]) == [0.0] * 20

    def test_two_points(self):
        a = ANN_ARBOR
        b = destination(a, 1.0, 100.0)
        assert gradient([(a, 10.0), (b, 15.0)]) == pytest.approx([0.05, 0.05], abs=1e-12)

    @pytest.mark.parametrize("d, dh", [(5.0, 0.1), (13.0, -0.4), (100.0, 2.5)])
    def test_ramp(self, d, dh):
        pts = meridian(50, d)
        g = gradient([(p, 100.0 + i * dh) for i, p in enumerate(pts)])
        assert all(abs(x - dh / d) <= 1e-9 for x in g)

    def test_last_replicates(self):
        pts = meridian(3, 10.0)
        g = gradient(list(zip(pts, [0.0, 1.0, 3.0])))
        assert g[2] == g[1] == pytest.approx(0.2)

    @given(st.floats(-100, 100), st.floats(-100, 100), st.floats(1, 1000), st.floats(0, 6.28))
    def test_antisymmetry(self, h1, h2, d, brg):
        a = ANN_ARBOR
        b = destination(a, brg, d)
        assert gradient([(a, h1), (b, h2)])[0] == -gradient([(b, h2), (a, h1)])[0]

    def test_coincident_warning(self):
        c = Counter()
        g = gradient([(ANN_ARBOR, 1.0), (ANN_ARBOR, 2.0), (ANN_ARBOR, 2.0)], c)
        assert g == [0.0, 0.0, 0.0]
        assert c["coincident_points"] == 1

    def test_too_short(self):
        with pytest.raises(ValueError):
            gradient([(ANN_ARBOR, 1.0)])


class TestElevationProviders:
    def test_cache_round_trip(self, tmp_path):
        path = tmp_path / "elev.csv"
        calls = []

        def fetch(batch):
            calls.append(len(batch))
            return [p.lat * 10 for p in batch]

        cache = ElevationCache(path, BatchedService(fetch, batch_size=2))
        pts = [GeoPoint(42.0 + i * 1e-3, -83.0) for i in range(5)]
        first = cache.elevations(pts + pts[:2])
        assert calls == [2, 2, 1]
        assert first[:5] == [p.lat * 10 for p in pts] and first[5:] == first[:2]
        assert path.read_text().splitlines()[0] == "lat5,lon5,elevation_m"
        reread = ElevationCache(path)
        assert reread.elevations(pts) == first[:5]
        assert len(reread) == 5

    def test_key_rounding(self, tmp_path):
        cache = ElevationCache(tmp_path / "e.csv", FunctionElevation(lambda p: p.lon))
        a = cache.elevations([GeoPoint(42.123451, -83.0000001)])
        b = cache.elevations([GeoPoint(42.123449, -83.0000004)])
        assert a == b

    def test_bad_header(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("lat,lon,h\n")
        with pytest.raises(ParseError):
            ElevationCache(path)

    def test_bad_row(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("lat5,lon5,elevation_m\n42.00000,-83.00000,abc\n")
        with pytest.raises(ParseError) as ei:
            ElevationCache(path)
        assert ei.value.line == 2

    def test_retry_then_success(self):
        attempts = []
        sleeps = []

        def flaky(batch):
            attempts.append(1)
            if len(attempts) < 3:
                raise OSError("busy")
            return [1.0] * len(batch)

        svc = BatchedService(flaky, retries=3, backoff_s=0.5, sleep=sleeps.append)
        assert svc.elevations([ANN_ARBOR]) == [1.0]
        assert sleeps == [0.5, 1.0]

    def test_retry_exhausted(self):
        def dead(batch):
            raise OSError("down")

        svc = BatchedService(dead, retries=2, sleep=lambda s: None)
        assert svc.elevations([ANN_ARBOR, ANN_ARBOR]) == [None, None]


def matched(p, i=0, edge_id=0, offset_m=0.0):
    return MatchedPoint(i, MatchStatus.MATCHED, p, edge_id, offset_m)


def feature_network(stops=(), focus=None, extra_ways=()):
    nodes = {1: ANN_ARBOR, 2: offset(ANN_ARBOR, 400, 0), 3: offset(ANN_ARBOR, 200, 200)}
    ways = [Way(1, (1, 2), {"highway": "residential"}), *extra_ways]
    return RoadNetwork.from_ways(nodes, ways, pois=focus or {}, bus_stops=list(stops))


class TestAnnotate:
    def test_bus_stop_within(self):
        net = feature_network(stops=[offset(ANN_ARBOR, 100, 8)])
        rec = annotate_infrastructure([matched(offset(ANN_ARBOR, 100, 0))], net)[0]
        assert rec.at_bus_stop and not rec.at_intersection and rec.focus == frozenset()

    def test_signal_outside(self):
        net = feature_network(focus={FocusPointKind.TRAFFIC_SIGNAL: [offset(ANN_ARBOR, 100, 3.5)],
                                     FocusPointKind.CROSSING: [offset(ANN_ARBOR, 100, 2.0)]})
        rec = annotate_infrastructure([matched(offset(ANN_ARBOR, 100, 0))], net)[0]
        assert rec.focus == {FocusPointKind.CROSSING}

    def test_intersection_radius(self):
        net = feature_network(extra_ways=[Way(2, (3, 1), {"highway": "residential"})])
        recs = annotate_infrastructure([matched(offset(ANN_ARBOR, 4.9, 0)),
                                        matched(offset(ANN_ARBOR, 5.2, 0))], net)
        assert [r.at_intersection for r in recs] == [True, False]
        wide = annotate_infrastructure([matched(offset(ANN_ARBOR, 5.2, 0))], net,
                                       Radii(intersection_m=6))
        assert wide[0].at_intersection

    def test_unmatched_empty(self):
        net = feature_network(stops=[ANN_ARBOR])
        rec = annotate_infrastructure([MatchedPoint(0, MatchStatus.UNMATCHED)], net)[0]
        assert rec == AnnotatedRecord(rec.matched)

    def test_radii_validated(self):
        with pytest.raises(ValueError):
            Radii(bus_stop_m=0)

    @pytest.mark.parametrize("seed", range(40))
    def test_equals_brute_force(self, seed):
        rng = random.Random(seed)

        def rnd(spread):
            return offset(ANN_ARBOR, rng.uniform(0, spread), rng.uniform(0, spread))

        spread = rng.choice([20.0, 60.0, 200.0])
        kinds = list(FocusPointKind)
        focus = {}
        for _ in range(rng.randint(0, 50)):
            focus.setdefault(rng.choice(kinds), []).append(rnd(spread))
        stops = [rnd(spread) for _ in range(rng.randint(0, 20))]
        net = feature_network(stops=stops, focus=focus)
        pts = [rnd(spread) for _ in range(rng.randint(1, 500))]
        radii = Radii(rng.choice([3.0, 5.0, 10.0]), rng.choice([3.0, 5.0, 10.0]),
                      rng.choice([3.0, 5.0, 10.0]))
        recs = annotate_infrastructure([matched(p, i) for i, p in enumerate(pts)], net, radii)
        inter = [net.node_coords[n] for n in net.intersection_nodes]
        assert [r.at_intersection for r in recs] == brute_flags(pts, inter, radii.intersection_m)
        assert [r.at_bus_stop for r in recs] == brute_flags(pts, stops, radii.bus_stop_m)
        for kind in kinds:
            want = brute_flags(pts, focus.get(kind, []), radii.focus_m)
            assert [kind in r.focus for r in recs] == want

    def test_does_not_mutate(self):
        net = feature_network(stops=[ANN_ARBOR])
        ms = [matched(offset(ANN_ARBOR, 3, 0)), MatchedPoint(1, MatchStatus.UNMATCHED)]
        recs = annotate_infrastructure(ms, net)
        assert [r.matched for r in recs] == ms


class TestEnrichTrip:
    def setup_method(self):
        nodes = {1: ANN_ARBOR, 2: offset(ANN_ARBOR, 400, 0)}
        tags = {"highway": "primary", "maxspeed:forward": "50 mph", "maxspeed:backward": "35 mph"}
        self.net = RoadNetwork.from_ways(nodes, [Way(1, (1, 2), tags)],
                                         pois={FocusPointKind.CROSSING: [offset(ANN_ARBOR, 100, 2)]})
        self.edge = self.net.edges[0]

    def trip(self, offsets):
        return [MatchedPoint(i, MatchStatus.MATCHED, self.edge.point_at(o), 0, o)
                for i, o in enumerate(offsets)]

    def test_direction_aware_limits(self):
        east = enrich_trip(self.trip([50, 100, 150]), self.net)
        west = enrich_trip(self.trip([150, 100, 50]), self.net)
        assert [r.speed_limit.directional_value_kmh for r in east] == pytest.approx([80.4672] * 3)
        assert [r.speed_limit.directional_value_kmh for r in west] == pytest.approx([56.32704] * 3)
        assert FocusPointKind.CROSSING in east[1].focus

    def test_flat_elevation(self):
        recs = enrich_trip(self.trip(range(0, 300, 10)), self.net, FunctionElevation(lambda p: 260.0))
        assert all(r.elevation.gradient == 0.0 and r.elevation.smoothed_m == 260.0 for r in recs)

    def test_elevation_runs(self):
        trace = self.trip([10, 20, 30, 40, 50, 60, 70, 80])
        trace[6] = MatchedPoint(6, MatchStatus.UNMATCHED)
        recs = enrich_trip(trace, self.net, FunctionElevation(lambda p: p.lon * 1000))
        assert recs[6].elevation is None and recs[6].speed_limit is None
        assert recs[7].elevation.gradient == 0.0  # single-record run
        assert recs[5].elevation.gradient == recs[4].elevation.gradient
        assert all(r.elevation.gradient > 0 for r in recs[:6])

    def test_unresolved_counted(self):
        c = Counter()
        recs = enrich_trip(self.trip([10, 20, 30]), self.net, FunctionElevation(lambda p: None),
                           counters=c)
        assert c["elevation_unresolved"] == 3 and all(r.elevation is None for r in recs)

    def test_bad_tag_counted(self):
        nodes = {1: ANN_ARBOR, 2: offset(ANN_ARBOR, 400, 0)}
        net = RoadNetwork.from_ways(nodes, [Way(1, (1, 2), {"highway": "primary", "maxspeed": "fast"})])
        c = Counter()
        trace = [MatchedPoint(0, MatchStatus.MATCHED, net.edges[0].point_at(5), 0, 5.0)]
        rec = enrich_trip(trace, net, counters=c)[0]
        assert rec.speed_limit is None and c["tag_parse_errors"] == 1

    def test_stationary_trip_forward(self):
        recs = enrich_trip(self.trip([100, 100]), self.net)
        assert recs[0].speed_limit.directional_value_kmh == pytest.approx(80.4672)

    def test_snapped_unchanged(self):
        trace = self.trip([10, 20])
        recs = enrich_trip(trace, self.net, FunctionElevation(lambda p: 1.0))
        assert [r.matched for r in recs] == trace
        assert great_circle_distance(recs[0].matched.snapped, self.edge.point_at(10)) == 0.0
