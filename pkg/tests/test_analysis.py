import json
import math
import random
import statistics

import pytest
from hypothesis import given, strategies as st

from trace_enrich.analysis import (
    BinStat,
    EnrichedRow,
    SpeedEnergyStats,
    build_stats,
    estimate_trip_energy,
    extract_learning_segments,
    free_flow_histogram,
    group_trips,
    lowest_fraction_speed,
    rmse,
    speed_time_heatmap,
    write_heatmap_csv,
    write_histogram_csv,
    write_segments_csv,
)
from trace_enrich.errors import EmptyHistogram, ShapeError, UncoveredTrip

LIM = 40.2336


def trip(speeds, veh=1, trip_id=1, dt_ms=1000, rate=None, limit=LIM, start_ms=0, **kw):
    rate = rate or (lambda s: 2.0)
    return [EnrichedRow(veh, trip_id, start_ms + i * dt_ms, day_num=0.5 + i / 86400,
                        speed_kmh=s, energy=rate(s) * dt_ms / 1000, speed_limit_kmh=limit,
                        gradient=0.0, **kw)
            for i, s in enumerate(speeds)]


class TestBuildStats:
    def test_single_bin(self):
        st_ = build_stats([trip([30.0] * 10)])
        assert [b.speed_bin_kmh for b in st_.limits[LIM]] == [30]
        assert st_.weighted_mean(LIM) == 2.0
        assert st_.skipped["first_record"] == 1

    def test_two_bins_weighted(self):
        stats = SpeedEnergyStats({50.0: [BinStat(10, 3, 3.0, 1.0), BinStat(20, 1, 1.0, 5.0)]})
        assert stats.weighted_mean(50.0) == 2.0

    @pytest.mark.parametrize("seed", range(10))
    def test_rate_speed_over_ten(self, seed):
        rng = random.Random(seed)
        speeds = [rng.uniform(0, 80) for _ in range(2000)]
        stats = build_stats([trip(speeds, rate=lambda s: math.floor(s) / 10)])
        used = [math.floor(s) for s in speeds[1:]]
        n = len(used)
        freq = {b: used.count(b) / n for b in set(used)}
        want = math.fsum(p * b / 10 for b, p in freq.items())
        assert stats.weighted_mean(LIM) == pytest.approx(want, abs=1e-9)

    def test_skips(self):
        rows = trip([10.0, 20.0, 30.0, 40.0, 50.0])
        rows[1] = EnrichedRow(1, 1, 1000, speed_kmh=None, energy=1.0, speed_limit_kmh=LIM)
        rows[2] = EnrichedRow(1, 1, 2000, speed_kmh=5.0, energy=None, speed_limit_kmh=LIM)
        rows[3] = EnrichedRow(1, 1, 3000, speed_kmh=5.0, energy=1.0, speed_limit_kmh=None)
        rows.append(EnrichedRow(1, 1, 4000, speed_kmh=5.0, energy=1.0, speed_limit_kmh=LIM))
        stats = build_stats([rows])
        assert stats.skipped == {"first_record": 1, "non_positive_dt": 1, "missing_speed": 1,
                                 "missing_energy": 1, "missing_limit": 1}

    def test_irregular_intervals(self):
        rows = [EnrichedRow(1, 1, t, speed_kmh=30.0, energy=e, speed_limit_kmh=LIM)
                for t, e in [(0, 0.0), (1000, 2.0), (4000, 6.0), (5000, 2.0)]]
        assert build_stats([rows]).weighted_mean(LIM) == 2.0

    def test_json_round_trip(self):
        rng = random.Random(1)
        trips = [trip([rng.uniform(0, 60) for _ in range(50)], trip_id=k,
                      limit=rng.choice([LIM, 56.32704]), rate=lambda s: s / 7) for k in range(6)]
        stats = build_stats(trips)
        back = SpeedEnergyStats.from_json(stats.to_json())
        assert back.limits == stats.limits
        doc = json.loads(stats.to_json())
        assert set(doc["40.2336"][0]) == {"bin", "count", "seconds", "mean"}

    def test_order_independent(self):
        rng = random.Random(2)
        trips = [trip([rng.uniform(0, 60) for _ in range(30)], veh=v, trip_id=k, rate=lambda s: s)
                 for v in range(3) for k in range(3)]
        a = build_stats(trips).to_json()
        rng.shuffle(trips)
        assert build_stats(trips).to_json() == a


class TestEstimate:
    def test_sixty_seconds(self):
        stats = SpeedEnergyStats({LIM: [BinStat(30, 1, 1.0, 2.0)]})
        est = estimate_trip_energy(trip([30.0] * 61), stats)
        assert est.estimated == 120.0 and est.uncovered_s == 0.0
        assert est.seconds_by_limit == {LIM: 60.0}
        assert est.actual == pytest.approx(120.0)

    def test_uncovered_reported(self):
        stats = SpeedEnergyStats({LIM: [BinStat(30, 1, 1.0, 2.0)]})
        rows = trip([30.0] * 11) + trip([30.0] * 5, limit=88.0, start_ms=11_000)
        est = estimate_trip_energy(rows, stats)
        assert est.estimated == 20.0 and est.uncovered_s == 5.0

    def test_fully_uncovered(self):
        stats = SpeedEnergyStats({LIM: [BinStat(30, 1, 1.0, 2.0)]})
        with pytest.raises(UncoveredTrip):
            estimate_trip_energy(trip([30.0] * 5, limit=88.0), stats)

    @pytest.mark.parametrize("seed", range(5))
    def test_self_consistency(self, seed):
        rng = random.Random(seed)
        trips = []
        for k in range(20):
            dt = rng.choice([500, 1000, 2000])
            trips.append(trip([rng.uniform(0, 90) for _ in range(rng.randint(2, 200))], trip_id=k,
                              dt_ms=dt, limit=rng.choice([LIM, 56.32704, 88.51392]),
                              rate=lambda s: 0.1 + (s / 30) ** 2))
        stats = build_stats(trips)
        est = sum(estimate_trip_energy(t, stats).estimated for t in trips)
        actual = sum(estimate_trip_energy(t, stats).actual for t in trips)
        assert est == pytest.approx(actual, rel=1e-6)


class TestRmse:
    def test_identical(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_example(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30),
           st.randoms())
    def test_permutation(self, pairs, rnd):
        a, e = zip(*pairs)
        base = rmse(a, e)
        rnd.shuffle(pairs)
        a2, e2 = zip(*pairs)
        assert rmse(a2, e2) == pytest.approx(base, rel=1e-12, abs=1e-12)

    def test_shape(self):
        with pytest.raises(ShapeError):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(ShapeError):
            rmse([], [])


class TestHistogram:
    def test_excludes_flagged(self):
        rows = trip([30.0 + i for i in range(7)]) + trip([30.0] * 3, at_intersection=False,
                                                        focus=frozenset({"traffic_signal"}))
        h = free_flow_histogram(rows, LIM)
        assert h.total == 7

    def test_single_bin(self):
        h = free_flow_histogram(trip([33.3] * 5), LIM, 5.0)
        assert [c for _, _, c in h.bins() if c] == [5] and h.bins()[0][:2] == (30.0, 35.0)

    def test_limit_filter_and_fraction(self):
        rows = trip([40.0, 45.0, 60.0, 70.0]) + trip([10.0] * 4, limit=88.0)
        h = free_flow_histogram(rows, LIM)
        assert h.total == 4 and h.fraction_below_50 == 0.5

    def test_empty(self):
        with pytest.raises(EmptyHistogram):
            free_flow_histogram(trip([30.0] * 3, at_bus_stop=True), LIM)

    def test_csv(self, tmp_path):
        h = free_flow_histogram(trip([1.0, 3.5]), LIM, 2.0)
        write_histogram_csv(tmp_path / "h.csv", h)
        assert (tmp_path / "h.csv").read_text().splitlines() == [
            "bin_low_kmh,bin_high_kmh,count", "0.0,2.0,1", "2.0,4.0,1"]


def heat_rows(speeds_by_hour):
    rows = []
    for hour, speeds in speeds_by_hour.items():
        for s in speeds:
            rows.append(EnrichedRow(1, 1, 0, day_num=10 + (hour + 0.01) / 24, speed_kmh=s,
                                    speed_limit_kmh=LIM))
    return rows


def cdf_boundary(speeds, pct):
    """Direct scan of the empirical CDF."""
    s = sorted(speeds)
    for i, v in enumerate(s):
        if (i + 1) / len(s) >= pct / 100 - 1e-12:
            return v


class TestHeatmap:
    def test_example_column(self):
        hm = speed_time_heatmap(heat_rows({8: [10.0 * k for k in range(1, 11)]}), LIM, 60, 10.0)
        assert hm.contours[10][8] == 10.0 and hm.contours[30][8] == 30.0
        assert hm.contours[10][7] is None
        assert hm.column_totals()[8] == 10

    def test_uniform(self):
        hm = speed_time_heatmap(heat_rows({h: [20.0, 30.0, 40.0, 50.0] for h in range(24)}), LIM, 60)
        for p in (10, 20, 30):
            assert len(set(hm.contours[p])) == 1

    @pytest.mark.parametrize("seed", range(50))
    def test_random_matches_cdf(self, seed):
        rng = random.Random(seed)
        data = {h: [rng.choice([rng.uniform(0, 100), float(rng.randint(0, 20))])
                    for _ in range(rng.randint(0, 40))] for h in rng.sample(range(24), 6)}
        hm = speed_time_heatmap(heat_rows(data), LIM, 60, 2.5)
        for h in range(24):
            speeds = data.get(h, [])
            assert hm.column_totals()[h] == len(speeds)
            for p in (10, 20, 30):
                assert hm.contours[p][h] == (cdf_boundary(speeds, p) if speeds else None)
            if speeds:
                assert hm.contours[10][h] <= hm.contours[20][h] <= hm.contours[30][h]

    def test_lowest_fraction_integer_boundary(self):
        # 20% of 5 is exactly one sample
        assert lowest_fraction_speed([1.0, 2.0, 3.0, 4.0, 5.0], 20) == 1.0
        assert lowest_fraction_speed([1.0, 2.0, 3.0, 4.0, 5.0], 21) == 2.0

    def test_bad_bins(self):
        with pytest.raises(ValueError):
            speed_time_heatmap([], None, 7)
        with pytest.raises(ValueError):
            speed_time_heatmap([], None, 15, 0)

    def test_csv(self, tmp_path):
        hm = speed_time_heatmap(heat_rows({0: [5.0]}), LIM, 720, 10.0)
        write_heatmap_csv(tmp_path / "m.csv", tmp_path / "c.csv", hm)
        assert (tmp_path / "m.csv").read_text().splitlines() == [
            "time_bin_start_h,speed_bin_low_kmh,count", "0.0,0.0,1", "12.0,0.0,0"]
        assert (tmp_path / "c.csv").read_text().splitlines() == [
            "time_bin_start_h,lowest_10pct_kmh,lowest_20pct_kmh,lowest_30pct_kmh",
            "0.0,5.0,5.0,5.0", "12.0,,,"]


class TestSegments:
    def test_two_segments(self):
        segs = extract_learning_segments([trip([float(i % 90) for i in range(480)])])
        assert len(segs) == 2 and all(len(s.rows) == 240 for s in segs)
        assert segs[1].start == 240

    def test_short_trip(self):
        assert extract_learning_segments([trip([1.0] * 239)]) == []

    def test_median_even(self):
        segs = extract_learning_segments([trip([float(i) for i in range(1, 241)])])
        assert segs[0].target == 120.5

    def test_horizon_flags(self):
        rows = trip([30.0] * 240)
        k = 100
        rows[k] = EnrichedRow(**{**{f: getattr(rows[k], f) for f in rows[k].__slots__},
                                 "at_bus_stop": True})
        seg = extract_learning_segments([rows])[0]
        appr = [r[6] for r in seg.rows]
        dep = [r[7] for r in seg.rows]
        assert [i for i, v in enumerate(appr) if v] == list(range(k - 30, k))
        assert [i for i, v in enumerate(dep) if v] == list(range(k + 1, k + 31))
        assert seg.rows[k][4] == 1 and sum(r[4] for r in seg.rows) == 1

    def test_no_boundary_crossing(self):
        trips = [trip([10.0] * 300, trip_id=1), trip([20.0] * 200, trip_id=2)]
        segs = extract_learning_segments(trips)
        assert [(s.trip, s.target) for s in segs] == [((1, 1), 10.0)]

    def test_gap_in_usable_rows(self):
        rows = trip([10.0] * 500)
        rows[250] = EnrichedRow(1, 1, rows[250].timestamp_ms, day_num=0.5, speed_kmh=None)
        segs = extract_learning_segments([rows])
        assert [s.start for s in segs] == [0, 251]

    def test_order_independent(self, tmp_path):
        trips = [trip([float(v + t) for v in range(250)], veh=t % 3, trip_id=t) for t in range(6)]
        a = extract_learning_segments(trips)
        b = extract_learning_segments(list(reversed(trips)))
        assert [(s.trip, s.target) for s in a] == [(s.trip, s.target) for s in b]
        write_segments_csv(tmp_path / "s.csv", tmp_path / "t.csv", a)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert len(lines) == 1 + 240 * len(a)
        assert lines[0].startswith("segment_id,VehId,Trip,row,time_of_day_h")

    def test_group_trips(self):
        rows = trip([1.0] * 3, veh=2) + trip([1.0] * 2, veh=1)
        g = group_trips(rows)
        assert list(g) == [(1, 1), (2, 1)] and len(g[(2, 1)]) == 3


def test_median_matches_statistics():
    rng = random.Random(0)
    speeds = [rng.uniform(0, 100) for _ in range(240)]
    seg = extract_learning_segments([trip(speeds)])[0]
    assert seg.target == statistics.median(speeds)
