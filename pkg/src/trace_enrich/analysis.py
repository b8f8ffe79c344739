"""Use cases over enriched records: energy estimation, speed distributions,
and fixed-length learning segments.

Every function accepts trips in any order and returns results in canonical
``(veh_id, trip)`` order, so outputs never depend on input permutation.
"""
from __future__ import annotations

import csv
import json
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyHistogram, ShapeError, UncoveredTrip

LIMIT_DECIMALS = 4  # limits are grouped after rounding to this many decimals
LIMIT_TOLERANCE_KMH = 0.005


@dataclass(frozen=True, slots=True)
class EnrichedRow:
    veh_id: int
    trip: int
    timestamp_ms: int
    day_num: float | None = None
    speed_kmh: float | None = None
    energy: float | None = None
    speed_limit_kmh: float | None = None
    gradient: float | None = None
    at_intersection: bool = False
    at_bus_stop: bool = False
    focus: frozenset = frozenset()

    @property
    def any_flag(self) -> bool:
        return self.at_intersection or self.at_bus_stop or bool(self.focus)

    @property
    def time_of_day_h(self) -> float | None:
        if self.day_num is None:
            return None
        return (self.day_num % 1.0) * 24.0


TripKey = tuple[int, int]


def group_trips(rows: Iterable[EnrichedRow]) -> dict[TripKey, list[EnrichedRow]]:
    """Rows grouped per (veh_id, trip), keys sorted, rows in input order."""
    out: dict[TripKey, list[EnrichedRow]] = defaultdict(list)
    for r in rows:
        out[(r.veh_id, r.trip)].append(r)
    return {k: out[k] for k in sorted(out)}


def _as_trips(trips) -> list[list[EnrichedRow]]:
    if isinstance(trips, Mapping):
        trips = trips.values()
    trips = [list(t) for t in trips if t]
    return sorted(trips, key=lambda t: (t[0].veh_id, t[0].trip))


def _intervals(trip: Sequence[EnrichedRow]):
    """(row, dt seconds) for each record after the first; dt may be <= 0."""
    for prev, cur in zip(trip, trip[1:]):
        yield cur, (cur.timestamp_ms - prev.timestamp_ms) / 1000.0


def _limit_key(v: float) -> float:
    return round(float(v), LIMIT_DECIMALS)


# -- energy -------------------------------------------------------------------

@dataclass(slots=True)
class _Bin:
    count: int = 0
    seconds: float = 0.0
    energy: float = 0.0


@dataclass(frozen=True, slots=True)
class BinStat:
    speed_bin_kmh: int
    count: int
    seconds: float
    mean_energy_per_second: float


@dataclass
class SpeedEnergyStats:
    """Per speed limit: 1 km/h speed bins with mean energy per second."""

    limits: dict[float, list[BinStat]] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    def weighted_mean(self, limit_kmh: float) -> float:
        bins = self.limits[_limit_key(limit_kmh)]
        secs = math.fsum(b.seconds for b in bins)
        return math.fsum(b.seconds * b.mean_energy_per_second for b in bins) / secs

    def has_limit(self, limit_kmh: float) -> bool:
        return _limit_key(limit_kmh) in self.limits

    def to_json(self) -> str:
        doc = {repr(k): [{"bin": b.speed_bin_kmh, "count": b.count, "seconds": b.seconds,
                          "mean": b.mean_energy_per_second} for b in bins]
               for k, bins in sorted(self.limits.items())}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SpeedEnergyStats":
        doc = json.loads(text)
        limits = {}
        for k, bins in doc.items():
            limits[_limit_key(float(k))] = [
                BinStat(int(b["bin"]), int(b["count"]), float(b.get("seconds", b["count"])),
                        float(b["mean"])) for b in bins]
        return cls(limits)


def build_stats(trips) -> SpeedEnergyStats:
    """Bin per-second energy by speed limit and 1 km/h speed bin.

    A record contributes its interval since the previous record of the same
    trip. Records lacking speed, energy or limit, and non-positive
    intervals, are skipped and tallied in ``stats.skipped``.
    """
    acc: dict[float, dict[int, _Bin]] = defaultdict(lambda: defaultdict(_Bin))
    skipped = {"first_record": 0, "non_positive_dt": 0, "missing_speed": 0,
               "missing_energy": 0, "missing_limit": 0}
    for trip in _as_trips(trips):
        skipped["first_record"] += 1
        for row, dt in _intervals(trip):
            if dt <= 0:
                skipped["non_positive_dt"] += 1
            elif row.speed_kmh is None:
                skipped["missing_speed"] += 1
            elif row.energy is None:
                skipped["missing_energy"] += 1
            elif row.speed_limit_kmh is None:
                skipped["missing_limit"] += 1
            else:
                b = acc[_limit_key(row.speed_limit_kmh)][int(math.floor(row.speed_kmh))]
                b.count += 1
                b.seconds += dt
                b.energy += row.energy
    limits = {
        lim: [BinStat(k, b.count, b.seconds, b.energy / b.seconds) for k, b in sorted(bins.items())]
        for lim, bins in sorted(acc.items())}
    return SpeedEnergyStats(limits, skipped)


@dataclass(frozen=True)
class TripEnergyEstimate:
    trip: TripKey
    estimated: float
    actual: float | None
    seconds_by_limit: dict[float, float]
    uncovered_s: float


def estimate_trip_energy(trip: Sequence[EnrichedRow], stats: SpeedEnergyStats) -> TripEnergyEstimate:
    """Sum over limits of time driven under the limit times its mean rate.

    Time under limits missing from ``stats`` (or with no limit) is reported
    as ``uncovered_s``. Raises UncoveredTrip if no time is covered.
    """
    trip = list(trip)
    if not trip:
        raise UncoveredTrip("empty trip")
    key = (trip[0].veh_id, trip[0].trip)
    seconds: dict[float, float] = defaultdict(float)
    uncovered = 0.0
    energies = []
    for row, dt in _intervals(trip):
        if dt <= 0:
            continue
        if row.energy is not None:
            energies.append(row.energy)
        if row.speed_limit_kmh is not None and stats.has_limit(row.speed_limit_kmh):
            seconds[_limit_key(row.speed_limit_kmh)] += dt
        else:
            uncovered += dt
    if not seconds:
        raise UncoveredTrip(f"trip {key}: no time under a known speed limit "
                            f"({uncovered:g} s uncovered)")
    est = math.fsum(t * stats.weighted_mean(lim) for lim, t in sorted(seconds.items()))
    actual = math.fsum(energies) if energies else None
    return TripEnergyEstimate(key, est, actual, dict(sorted(seconds.items())), uncovered)


def rmse(actual: Sequence[float], estimated: Sequence[float]) -> float:
    if len(actual) != len(estimated):
        raise ShapeError(f"length mismatch: {len(actual)} vs {len(estimated)}")
    if not actual:
        raise ShapeError("empty input")
    return math.sqrt(math.fsum((a - e) ** 2 for a, e in zip(actual, estimated)) / len(actual))


# -- speed distributions ------------------------------------------------------

def _limit_matches(row: EnrichedRow, limit_kmh: float | None) -> bool:
    if limit_kmh is None:
        return True
    return row.speed_limit_kmh is not None and abs(row.speed_limit_kmh - limit_kmh) <= LIMIT_TOLERANCE_KMH


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    first_bin: int
    counts: list[int]
    fraction_below_50: float

    @property
    def total(self) -> int:
        return sum(self.counts)

    def bins(self):
        """(low edge, high edge, count) per bin."""
        w = self.bin_width
        return [((self.first_bin + i) * w, (self.first_bin + i + 1) * w, c)
                for i, c in enumerate(self.counts)]


def free_flow_histogram(rows: Iterable[EnrichedRow], limit_kmh: float, bin_width: float = 1.0) -> Histogram:
    """Speeds under ``limit_kmh`` from records with no infrastructure flag."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    speeds = [r.speed_kmh for r in rows
              if r.speed_kmh is not None and not r.any_flag and _limit_matches(r, limit_kmh)]
    if not speeds:
        raise EmptyHistogram(f"no free-flow samples under limit {limit_kmh:g} km/h")
    idx = [int(math.floor(s / bin_width)) for s in speeds]
    lo, hi = min(idx), max(idx)
    counts = [0] * (hi - lo + 1)
    for i in idx:
        counts[i - lo] += 1
    below = sum(1 for s in speeds if s < 50.0)
    return Histogram(bin_width, lo, counts, below / len(speeds))


def lowest_fraction_speed(sorted_speeds: Sequence[float], pct: int) -> float:
    """Smallest speed whose cumulative count reaches ``pct`` percent."""
    n = len(sorted_speeds)
    k = (pct * n + 99) // 100  # smallest k with 100 k >= pct n
    return sorted_speeds[max(k, 1) - 1]


@dataclass(frozen=True)
class SpeedHeatmap:
    time_bin_min: int
    speed_bin_kmh: float
    counts: list[list[int]]  # [time bin][speed bin]
    contours: dict[int, list[float | None]]  # percent -> per time bin

    def column_totals(self) -> list[int]:
        return [sum(col) for col in self.counts]


CONTOUR_PERCENTS = (10, 20, 30)


def speed_time_heatmap(rows: Iterable[EnrichedRow], limit_kmh: float | None = None,
                       time_bin_min: int = 15, speed_bin_kmh: float = 1.0,
                       percents: Sequence[int] = CONTOUR_PERCENTS) -> SpeedHeatmap:
    """Counts over (time-of-day bin, speed bin) plus lowest-k% speed contours."""
    if not (isinstance(time_bin_min, int) and 0 < time_bin_min <= 1440 and 1440 % time_bin_min == 0):
        raise ValueError("time_bin_min must be a positive divisor of 1440")
    if not speed_bin_kmh > 0:
        raise ValueError("speed_bin_kmh must be positive")
    n_time = 1440 // time_bin_min
    columns: list[list[float]] = [[] for _ in range(n_time)]
    for r in rows:
        tod = r.time_of_day_h
        if r.speed_kmh is None or tod is None or not _limit_matches(r, limit_kmh):
            continue
        t = min(int(tod * 60.0 // time_bin_min), n_time - 1)
        columns[t].append(r.speed_kmh)
    top = max((int(s // speed_bin_kmh) for col in columns for s in col), default=-1)
    counts = [[0] * (top + 1) for _ in range(n_time)]
    for t, col in enumerate(columns):
        for s in col:
            counts[t][int(s // speed_bin_kmh)] += 1
    contours = {}
    for pct in percents:
        line = []
        for col in columns:
            line.append(lowest_fraction_speed(sorted(col), pct) if col else None)
        contours[pct] = line
    return SpeedHeatmap(time_bin_min, speed_bin_kmh, counts, contours)


# -- learning segments --------------------------------------------------------

FEATURES = ("time_of_day_h", "speed_limit_kmh", "gradient", "at_intersection", "at_bus_stop",
            "at_focus_point", "approaching_within_horizon", "departing_within_horizon")


@dataclass(frozen=True)
class LearningSegment:
    trip: TripKey
    start: int  # index of the first row within the trip
    rows: list[tuple]
    speeds: list[float]
    target: float


def _proximity_flags(trip: Sequence[EnrichedRow], horizon_ms: float):
    n = len(trip)
    approaching = [0] * n
    departing = [0] * n
    nxt = None
    for i in range(n - 1, -1, -1):
        if nxt is not None and trip[nxt].timestamp_ms - trip[i].timestamp_ms <= horizon_ms:
            approaching[i] = 1
        if trip[i].any_flag:
            nxt = i
    prev = None
    for i in range(n):
        if prev is not None and trip[i].timestamp_ms - trip[prev].timestamp_ms <= horizon_ms:
            departing[i] = 1
        if trip[i].any_flag:
            prev = i
    return approaching, departing


def _usable(r: EnrichedRow) -> bool:
    return (r.speed_kmh is not None and r.speed_limit_kmh is not None
            and r.gradient is not None and r.day_num is not None)


def extract_learning_segments(trips, segment_len: int = 240, horizon_s: float = 30.0) -> list[LearningSegment]:
    """Non-overlapping windows of ``segment_len`` consecutive usable records.

    Target is the median window speed. Proximity flags look ``horizon_s``
    seconds ahead (approaching) and behind (departing) over the whole trip.
    """
    if segment_len < 1:
        raise ValueError("segment_len must be >= 1")
    if not horizon_s >= 0:
        raise ValueError("horizon_s must be non-negative")
    out = []
    for trip in _as_trips(trips):
        key = (trip[0].veh_id, trip[0].trip)
        appr, dep = _proximity_flags(trip, horizon_s * 1000.0)
        run: list[int] = []
        for i in range(len(trip) + 1):
            if i < len(trip) and _usable(trip[i]):
                run.append(i)
                continue
            for s in range(0, len(run) - segment_len + 1, segment_len):
                idx = run[s:s + segment_len]
                rows = []
                for j in idx:
                    r = trip[j]
                    rows.append((r.time_of_day_h, r.speed_limit_kmh, r.gradient, int(r.at_intersection),
                                 int(r.at_bus_stop), int(bool(r.focus)), appr[j], dep[j]))
                speeds = [trip[j].speed_kmh for j in idx]
                out.append(LearningSegment(key, idx[0], rows, speeds, statistics.median(speeds)))
            run = []
    return out


# -- exports ------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_histogram_csv(path, hist: Histogram):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bin_low_kmh", "bin_high_kmh", "count"))
        for lo, hi, c in hist.bins():
            w.writerow((_fmt(float(lo)), _fmt(float(hi)), c))


def write_heatmap_csv(path, contour_path, hm: SpeedHeatmap):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time_bin_start_h", "speed_bin_low_kmh", "count"))
        for t, col in enumerate(hm.counts):
            for s, c in enumerate(col):
                w.writerow((_fmt(t * hm.time_bin_min / 60.0), _fmt(s * hm.speed_bin_kmh), c))
    with open(contour_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        pcts = sorted(hm.contours)
        w.writerow(("time_bin_start_h", *(f"lowest_{p}pct_kmh" for p in pcts)))
        for t in range(len(hm.counts)):
            w.writerow((_fmt(t * hm.time_bin_min / 60.0), *(_fmt(hm.contours[p][t]) for p in pcts)))


def write_segments_csv(path, target_path, segments: Sequence[LearningSegment]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("segment_id", "VehId", "Trip", "row", *FEATURES))
        for sid, seg in enumerate(segments):
            for k, row in enumerate(seg.rows):
                w.writerow((sid, seg.trip[0], seg.trip[1], k, *(_fmt(v) for v in row)))
    with open(target_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("segment_id", "VehId", "Trip", "target_median_speed_kmh"))
        for sid, seg in enumerate(segments):
            w.writerow((sid, seg.trip[0], seg.trip[1], _fmt(float(seg.target))))
