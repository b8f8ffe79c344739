"""Batch front-end: ``trace-enrich <command> --config run.toml [--dotted.key value ...]``.

Exit codes: 0 success, 2 input/config error, 3 network error, 4 enrichment
error, 5 analysis error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import multiprocessing as mp
import os
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis
from .analysis import EnrichedRow, SpeedEnergyStats
from .config import PipelineConfig, load_config, parse_override_value
from .enrich import ElevationCache, enrich_trip
from .errors import (ConfigError, ElevationUnresolved, EmptyHistogram, EmptyNetwork, OrderError,
                     ParseError, UncoveredTrip)
from .geo import GeoPoint
from .matching import MapMatcher, MatchedPoint, MatchStatus, TracePoint, match_rate
from .network import load_bus_stops_csv
from .osm import load_osm

log = logging.getLogger("trace_enrich")

EXIT_OK, EXIT_INPUT, EXIT_NETWORK, EXIT_ENRICH, EXIT_ANALYSIS = 0, 2, 3, 4, 5

REQUIRED = ("VehId", "Trip", "Timestamp_ms", "Latitude", "Longitude")
MATCH_COLUMNS = ("MatchedLatitude", "MatchedLongitude", "MatchType", "EdgeId", "OffsetM")
ENRICH_COLUMNS = ("SpeedLimit_kmh", "SpeedLimitDirectional_kmh", "SpeedLimitClass", "ElevationRaw_m",
                  "ElevationSmoothed_m", "Gradient", "Intersection", "BusStop", "FocusPoints")
COMMANDS = ("match", "enrich", "stats", "estimate", "histogram", "heatmap", "segments")


# -- CSV plumbing -------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        f = float(text)
        if not f.is_integer():
            raise
        return int(f)


def _opt_float(text: str | None) -> float | None:
    return None if text is None or text == "" else float(text)


class TripFile:
    """One CSV file grouped into trips; each row keeps its source line."""

    def __init__(self, path: Path, required=REQUIRED):
        self.path = path
        self.trips: dict[tuple[int, int], list[tuple[int, dict]]] = {}
        try:
            fh = open(path, newline="", encoding="utf-8")
        except OSError as exc:
            raise ParseError(path, 0, exc.strerror or "cannot open") from None
        with fh:
            reader = csv.DictReader(fh)
            self.fieldnames = list(reader.fieldnames or ())
            missing = [c for c in required if c not in self.fieldnames]
            if missing:
                raise ParseError(path, 1, f"missing columns: {', '.join(missing)}")
            for row in reader:
                if None in row or any(v is None for v in row.values()):
                    raise ParseError(path, reader.line_num, "wrong number of fields")
                try:
                    key = (_int(row["VehId"]), _int(row["Trip"]))
                except ValueError as exc:
                    raise ParseError(path, reader.line_num, str(exc)) from None
                self.trips.setdefault(key, []).append((reader.line_num, row))
        self.trips = {k: self.trips[k] for k in sorted(self.trips)}

    def trace(self, key) -> list[TracePoint]:
        out = []
        for line, row in self.trips[key]:
            try:
                out.append(TracePoint(_int(row["Timestamp_ms"]),
                                      GeoPoint(float(row["Latitude"]), float(row["Longitude"]))))
            except ValueError as exc:
                raise ParseError(self.path, line, str(exc)) from None
            if len(out) > 1 and out[-1].timestamp_ms < out[-2].timestamp_ms:
                raise OrderError(f"trip VehId={key[0]} Trip={key[1]}: timestamps decrease at "
                                 f"{self.path}:{line}", trip=key)
        return out


def _write_rows(path: Path, header, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _derived(cfg: PipelineConfig, src: Path, suffix: str) -> Path:
    return cfg.paths.output_dir / f"{src.stem}_{suffix}.csv"


# -- worker pool --------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(state):
    _WORKER.clear()
    _WORKER.update(state)


def _run_pool(fn, items, workers, state):
    """Ordered map over ``items``; results merge in input order."""
    if workers <= 1 or len(items) <= 1 or "fork" not in mp.get_all_start_methods():
        _init_worker(state)
        return [fn(x) for x in items]
    ctx = mp.get_context("fork")
    chunk = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker,
                             initargs=(state,)) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


def _match_one(trace):
    return _WORKER["matcher"].match(trace)


def _enrich_one(trace):
    c = Counter()
    recs = enrich_trip(trace, _WORKER["network"], _WORKER["elevation"], _WORKER["radii"], c)
    return recs, c


# -- commands -----------------------------------------------------------------

def _network(cfg: PipelineConfig):
    if cfg.paths.map is None:
        raise ConfigError("paths.map is required")
    stops = load_bus_stops_csv(cfg.paths.bus_stops) if cfg.paths.bus_stops else None
    try:
        return load_osm(cfg.paths.map, cell_size_m=cfg.cell_size_m, bus_stops=stops)
    except OSError as exc:
        raise ParseError(cfg.paths.map, 0, exc.strerror or "cannot open") from None


def _inputs(cfg: PipelineConfig):
    if not cfg.paths.trips:
        raise ConfigError("paths.trips is required")
    return cfg.paths.trips


def cmd_match(cfg: PipelineConfig) -> int:
    inputs = _inputs(cfg)
    network = _network(cfg)
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    matcher = MapMatcher(network, cfg.hmm)
    n_trips = 0
    all_results: list[MatchedPoint] = []
    for src in inputs:
        tf = TripFile(src)
        keys = list(tf.trips)
        traces = [tf.trace(k) for k in keys]
        results = _run_pool(_match_one, traces, cfg.workers, {"matcher": matcher})
        rows = []
        for key, res in zip(keys, results):
            for (_, raw), m in zip(tf.trips[key], res):
                snapped = m.snapped
                rows.append([raw[c] for c in tf.fieldnames] + [
                    _fmt(snapped.lat if snapped else None), _fmt(snapped.lon if snapped else None),
                    m.status.value, _fmt(m.edge_id), _fmt(m.offset_m)])
            all_results.extend(res)
        _write_rows(_derived(cfg, src, "matched"), tf.fieldnames + list(MATCH_COLUMNS), rows)
        n_trips += len(keys)
        log.info("%s: %d trips matched", src, len(keys))
    rate = match_rate(all_results) if all_results else 0.0
    print(f"matched {n_trips} trips, {len(all_results)} records, match_rate={rate:.6f}")
    return EXIT_OK


def _matched_trace(tf: TripFile, key) -> list[MatchedPoint]:
    out = []
    for i, (line, row) in enumerate(tf.trips[key]):
        try:
            status = MatchStatus(row["MatchType"])
            if status is MatchStatus.UNMATCHED:
                out.append(MatchedPoint(i, status))
                continue
            p = GeoPoint(float(row["MatchedLatitude"]), float(row["MatchedLongitude"]))
            out.append(MatchedPoint(i, status, p, _int(row["EdgeId"]), float(row["OffsetM"])))
        except ValueError as exc:
            raise ParseError(tf.path, line, str(exc)) from None
    return out


def _limit_cells(rec):
    lim = rec.speed_limit
    if lim is None:
        return ["", "", ""]
    return [_fmt(lim.value_kmh), _fmt(lim.directional_value_kmh), str(int(lim.cls))]


def cmd_enrich(cfg: PipelineConfig) -> int:
    inputs = _inputs(cfg)
    network = _network(cfg)
    elevation = ElevationCache(cfg.paths.elevation_cache) if cfg.paths.elevation_cache else None
    state = {"network": network, "elevation": elevation, "radii": cfg.radii}
    jobs = []
    for src in inputs:
        path = _derived(cfg, src, "matched")
        if not path.exists():
            raise ParseError(path, 0, "matched file not found; run the match command first")
        tf = TripFile(path, REQUIRED + MATCH_COLUMNS)
        keys = list(tf.trips)
        traces = [_matched_trace(tf, k) for k in keys]
        for tr in traces:
            for m in tr:
                if m.edge_id is not None and not 0 <= m.edge_id < len(network.edges):
                    raise ParseError(path, 0, f"edge id {m.edge_id} not in the loaded network")
        results = _run_pool(_enrich_one, traces, cfg.workers, state)
        jobs.append((src, tf, keys, results))

    counters = Counter()
    on_road = 0
    for _, _, _, results in jobs:
        for recs, c in results:
            counters.update(c)
            on_road += sum(1 for r in recs if r.matched.status is not MatchStatus.UNMATCHED)
    if elevation is not None and on_road:
        frac = counters["elevation_unresolved"] / on_road
        if frac > cfg.enrich.max_unresolved_fraction:
            raise ElevationUnresolved(
                f"{counters['elevation_unresolved']} of {on_road} points ({frac:.2%}) have no "
                f"elevation; limit is {cfg.enrich.max_unresolved_fraction:.2%}")

    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for src, tf, keys, results in jobs:
        rows = []
        for key, (recs, _) in zip(keys, results):
            for (_, raw), rec in zip(tf.trips[key], recs):
                base = [raw[c] for c in tf.fieldnames]
                if rec.matched.status is MatchStatus.UNMATCHED:
                    rows.append(base + [""] * len(ENRICH_COLUMNS))
                    continue
                e = rec.elevation
                rows.append(base + _limit_cells(rec) + [
                    _fmt(e.raw_m if e else None), _fmt(e.smoothed_m if e else None),
                    _fmt(e.gradient if e else None),
                    str(int(rec.at_intersection)), str(int(rec.at_bus_stop)),
                    ";".join(sorted(k.value for k in rec.focus))])
                n += 1
        _write_rows(_derived(cfg, src, "enriched"), tf.fieldnames + list(ENRICH_COLUMNS), rows)
    summary = ", ".join(f"{k}={counters[k]}" for k in sorted(counters)) or "no data-quality issues"
    print(f"enriched {n} on-road records ({summary})")
    return EXIT_OK


def _enriched_rows(cfg: PipelineConfig) -> list[EnrichedRow]:
    rows = []
    ecol = cfg.enrich.energy_column
    for src in _inputs(cfg):
        path = _derived(cfg, src, "enriched")
        if not path.exists():
            raise ParseError(path, 0, "enriched file not found; run the enrich command first")
        tf = TripFile(path, REQUIRED + ENRICH_COLUMNS)
        for key, items in tf.trips.items():
            for line, r in items:
                try:
                    limit = _opt_float(r["SpeedLimitDirectional_kmh"]) or _opt_float(r["SpeedLimit_kmh"])
                    rows.append(EnrichedRow(
                        key[0], key[1], _int(r["Timestamp_ms"]),
                        day_num=_opt_float(r.get("DayNum")),
                        speed_kmh=_opt_float(r.get("VehicleSpeed_kmh")),
                        energy=_opt_float(r.get(ecol)),
                        speed_limit_kmh=limit,
                        gradient=_opt_float(r["Gradient"]),
                        at_intersection=r["Intersection"] == "1",
                        at_bus_stop=r["BusStop"] == "1",
                        focus=frozenset(x for x in r["FocusPoints"].split(";") if x)))
                except ValueError as exc:
                    raise ParseError(path, line, str(exc)) from None
    return rows


def _stats_path(cfg):
    return cfg.paths.stats or cfg.paths.output_dir / "speed_energy_stats.json"


def cmd_stats(cfg) -> int:
    stats = analysis.build_stats(analysis.group_trips(_enriched_rows(cfg)))
    path = _stats_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(stats.to_json(), encoding="utf-8")
    skipped = ", ".join(f"{k}={v}" for k, v in sorted(stats.skipped.items()))
    print(f"stats for {len(stats.limits)} speed limits written to {path} (skipped: {skipped})")
    return EXIT_OK


def cmd_estimate(cfg) -> int:
    path = _stats_path(cfg)
    try:
        stats = SpeedEnergyStats.from_json(path.read_text(encoding="utf-8"))
    except OSError:
        raise ParseError(path, 0, "stats file not found; run the stats command first") from None
    except (ValueError, KeyError) as exc:
        raise ParseError(path, 0, f"bad stats document: {exc}") from None
    ests = [analysis.estimate_trip_energy(t, stats)
            for t in analysis.group_trips(_enriched_rows(cfg)).values()]
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    _write_rows(cfg.paths.output_dir / "energy_estimates.csv",
                ("VehId", "Trip", "estimated", "actual", "uncovered_s"),
                [(e.trip[0], e.trip[1], _fmt(e.estimated), _fmt(e.actual), _fmt(e.uncovered_s))
                 for e in ests])
    total = sum(e.estimated for e in ests)
    msg = f"estimated {len(ests)} trips, total={total!r}"
    if ests and all(e.actual is not None for e in ests):
        r = analysis.rmse([e.actual for e in ests], [e.estimated for e in ests])
        msg += f", actual_total={sum(e.actual for e in ests)!r}, rmse={r!r}"
    print(msg)
    return EXIT_OK


def _need_limit(cfg):
    if cfg.analysis.limit_kmh is None:
        raise ConfigError("analysis.limit_kmh is required for this command")
    return cfg.analysis.limit_kmh


def cmd_histogram(cfg) -> int:
    limit = _need_limit(cfg)
    hist = analysis.free_flow_histogram(_enriched_rows(cfg), limit, cfg.analysis.histogram_bin_kmh)
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.paths.output_dir / f"free_flow_histogram_{limit:g}.csv"
    analysis.write_histogram_csv(path, hist)
    print(f"{hist.total} free-flow samples under {limit:g} km/h, "
          f"fraction_below_50={hist.fraction_below_50!r}")
    return EXIT_OK


def cmd_heatmap(cfg) -> int:
    a = cfg.analysis
    hm = analysis.speed_time_heatmap(_enriched_rows(cfg), a.limit_kmh, a.time_bin_min, a.speed_bin_kmh)
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_heatmap_csv(cfg.paths.output_dir / "speed_time_heatmap.csv",
                               cfg.paths.output_dir / "speed_time_contours.csv", hm)
    print(f"heatmap with {sum(hm.column_totals())} samples")
    return EXIT_OK


def cmd_segments(cfg) -> int:
    a = cfg.analysis
    segs = analysis.extract_learning_segments(analysis.group_trips(_enriched_rows(cfg)),
                                              a.segment_len, a.horizon_s)
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_segments_csv(cfg.paths.output_dir / "learning_segments.csv",
                                cfg.paths.output_dir / "learning_targets.csv", segs)
    print(f"{len(segs)} segments exported")
    return EXIT_OK


_HANDLERS = {"match": cmd_match, "enrich": cmd_enrich, "stats": cmd_stats, "estimate": cmd_estimate,
             "histogram": cmd_histogram, "heatmap": cmd_heatmap, "segments": cmd_segments}


# -- entry point --------------------------------------------------------------

def _parse_overrides(extra: list[str]) -> list[tuple[str, object]]:
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigError(f"override {tok} needs a value")
        out.append((key, parse_override_value(value)))
    return out


def _setup_logging():
    level = os.environ.get("TRACE_ENRICH_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trace-enrich", description=__doc__.splitlines()[0],
        epilog="Any config key can be overridden with --section.key value.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="TOML configuration file")
    args, extra = parser.parse_known_args(argv)
    _setup_logging()
    try:
        cfg = load_config(args.config, _parse_overrides(extra))
        return _HANDLERS[args.command](cfg)
    except (ParseError, OrderError, ConfigError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyNetwork as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except ElevationUnresolved as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENRICH
    except (EmptyHistogram, UncoveredTrip) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
