"""HMM map matching solved with the Viterbi recursion.

Each distinct GPS fix is an observation; its hidden states are the closest
points of nearby road edges. Emissions score the fix-to-road distance with a
Gaussian, transitions compare the driving distance between two candidates to
the straight-line distance between the fixes (exponential in the difference).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from . import kernels
from .errors import EmptyTrace, OrderError
from .geo import GeoPoint
from .network import Candidate, RoadNetwork

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HmmParams:
    sigma_z: float = 4.07
    beta: float = 20.0
    candidate_radius: float = 50.0
    route_search_limit: float = 2000.0
    break_gap: float = 120.0  # seconds

    def __post_init__(self):
        for name in ("sigma_z", "beta", "candidate_radius", "route_search_limit", "break_gap"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"HmmParams.{name} must be positive, got {value!r}")


class MatchStatus(str, enum.Enum):
    MATCHED = "matched"
    INTERPOLATED = "interpolated"
    UNMATCHED = "unmatched"


@dataclass(frozen=True, slots=True)
class TracePoint:
    timestamp_ms: int
    point: GeoPoint
    speed_kmh: float | None = None
    energy: float | None = None


@dataclass(frozen=True, slots=True)
class MatchedPoint:
    """Result for one input record. ``snapped`` is None when unmatched."""

    index: int
    status: MatchStatus
    snapped: GeoPoint | None = None
    edge_id: int | None = None
    offset_m: float | None = None


def emission_log_prob(d: float, sigma_z: float) -> float:
    return -0.5 * (d / sigma_z) ** 2 - math.log(sigma_z) - _LOG_SQRT_2PI


def transition_log_prob(gc: float, route: float, beta: float) -> float:
    """``-inf`` when ``route`` is infinite (unreachable)."""
    if math.isinf(route):
        return -math.inf
    return -abs(route - gc) / beta - math.log(beta)


def _exits(edge, offset):
    out = []
    if edge.forward_allowed:
        out.append((edge.end_node, edge.length - offset))
    if edge.backward_allowed:
        out.append((edge.start_node, offset))
    return out


def _entries(edge, offset):
    out = []
    if edge.forward_allowed:
        out.append((edge.start_node, offset))
    if edge.backward_allowed:
        out.append((edge.end_node, edge.length - offset))
    return out


def _direct(edge, o1, o2):
    if o2 >= o1 and edge.forward_allowed:
        return o2 - o1
    if o2 <= o1 and edge.backward_allowed:
        return o1 - o2
    return math.inf


class Router:
    """Shortest drivable distances between positions on edges."""

    def __init__(self, network: RoadNetwork):
        self.network = network
        self._dijkstra = network.router()
        self._node_index = network.node_index

    def distances(self, sources, targets, limit):
        """Matrix of route distances; ``inf`` beyond ``limit``.

        ``sources`` and ``targets`` are ``(edge_id, offset)`` pairs. One
        bounded search runs per source.
        """
        edges = self.network.edges
        idx = self._node_index
        target_entries = [_entries(edges[e], o) for e, o in targets]
        target_nodes = sorted({idx[n] for ents in target_entries for n, _ in ents})
        slot = {n: i for i, n in enumerate(target_nodes)}
        out = []
        for e1, o1 in sources:
            edge = edges[e1]
            ex = _exits(edge, o1)
            dist = self._dijkstra.run([idx[n] for n, _ in ex], [c for _, c in ex],
                                      target_nodes, limit)
            row = []
            for (e2, o2), ents in zip(targets, target_entries):
                best = _direct(edge, o1, o2) if e2 == e1 else math.inf
                for n, c in ents:
                    d = dist[slot[idx[n]]] + c
                    if d < best:
                        best = d
                row.append(best if best <= limit else math.inf)
            out.append(row)
        return out


def route_distance(network: RoadNetwork, start, end, limit: float, router: Router | None = None) -> float:
    """Shortest drivable distance from ``start`` to ``end`` (``(edge_id, offset)``).

    One-way edges are honored. Returns ``math.inf`` when the distance
    exceeds ``limit`` (the transition is then forbidden).
    """
    router = router or Router(network)
    return router.distances([start], [end], limit)[0][0]


class MapMatcher:
    """Matches trips against one network. Keeps a search workspace, so use
    one instance per thread or process."""

    def __init__(self, network: RoadNetwork, params: HmmParams | None = None):
        self.network = network
        self.params = params or HmmParams()
        self.router = Router(network)

    def candidates(self, p: GeoPoint) -> list[Candidate]:
        return self.network.nearest_edges(p, self.params.candidate_radius)

    def chain_model(self, points: Sequence[GeoPoint], cands: Sequence[Sequence[Candidate]]):
        """Emission and transition log-probabilities for one observation chain."""
        prm = self.params
        emissions = [[emission_log_prob(c.distance, prm.sigma_z) for c in cs] for cs in cands]
        transitions = []
        for t in range(1, len(points)):
            a, b = points[t - 1], points[t]
            gc = kernels.haversine(a.lat, a.lon, b.lat, b.lon)
            routes = self.router.distances(
                [(c.edge_id, c.offset) for c in cands[t - 1]],
                [(c.edge_id, c.offset) for c in cands[t]],
                prm.route_search_limit)
            transitions.append([[transition_log_prob(gc, r, prm.beta) for r in row]
                                for row in routes])
        return emissions, transitions

    def decode_chain(self, points, cands) -> list[int]:
        """State index per observation; restarts where the chain breaks."""
        emissions, transitions = self.chain_model(points, cands)
        states = []
        start = 0
        n = len(points)
        while start < n:
            path, decoded = kernels.viterbi(emissions[start:], transitions[start:])
            states.extend(path)
            start += decoded
        return states

    def match(self, trace: Sequence[TracePoint]) -> list[MatchedPoint]:
        if not trace:
            raise EmptyTrace("trace has no records")
        for i in range(1, len(trace)):
            if trace[i].timestamp_ms < trace[i - 1].timestamp_ms:
                raise OrderError(f"timestamps decrease at record {i}")

        # runs of identical raw coordinates -> one observation each
        runs = []
        for i, tp in enumerate(trace):
            if runs and trace[runs[-1][0]].point == tp.point:
                runs[-1].append(i)
            else:
                runs.append([i])

        out: list[MatchedPoint | None] = [None] * len(trace)
        chain: list[tuple[list[int], list[Candidate]]] = []
        gap_ms = self.params.break_gap * 1000.0

        def flush():
            if not chain:
                return
            states = self.decode_chain([trace[r[0]].point for r, _ in chain],
                                       [cs for _, cs in chain])
            for (run, cs), s in zip(chain, states):
                c = cs[s]
                out[run[0]] = MatchedPoint(run[0], MatchStatus.MATCHED, c.point, c.edge_id, c.offset)
                for i in run[1:]:
                    out[i] = MatchedPoint(i, MatchStatus.INTERPOLATED, c.point, c.edge_id, c.offset)
            chain.clear()

        prev_last = None
        for run in runs:
            first = run[0]
            if prev_last is not None and (
                    trace[first].timestamp_ms - trace[prev_last].timestamp_ms > gap_ms):
                flush()
            prev_last = run[-1]
            cs = self.candidates(trace[first].point)
            if not cs:
                flush()
                for i in run:
                    out[i] = MatchedPoint(i, MatchStatus.UNMATCHED)
                continue
            chain.append((run, cs))
        flush()
        return out


def viterbi_match(trace: Sequence[TracePoint], network: RoadNetwork,
                  params: HmmParams | None = None) -> list[MatchedPoint]:
    return MapMatcher(network, params).match(trace)


def match_rate(results: Sequence[MatchedPoint]) -> float:
    """Share of records labelled matched or interpolated."""
    if not results:
        raise EmptyTrace("no results")
    ok = sum(1 for r in results if r.status is not MatchStatus.UNMATCHED)
    return ok / len(results)
