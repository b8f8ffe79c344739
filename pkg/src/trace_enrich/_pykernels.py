"""Pure-Python implementations of the hot kernels.

Must stay call-compatible with ``_kernels.pyx``; ``tests/test_kernels.py``
checks the two against each other.
"""
import heapq
import math

EARTH_RADIUS_M = 6371000.0
INF = math.inf
NEG_INF = -math.inf
# Scores closer than this (relative, floor 1) count as ties. Float rounding
# otherwise hides exact ties, e.g. between the two directions of one street.
TIE_TOL = 1e-10


def _beats(s, best):
    if best == NEG_INF:
        return s > best
    return s > best + TIE_TOL * max(1.0, abs(best))

_RAD = math.pi / 180.0


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between two lat/lon pairs in degrees."""
    p1 = lat1 * _RAD
    p2 = lat2 * _RAD
    sdlat = math.sin((p2 - p1) * 0.5)
    sdlon = math.sin((lon2 - lon1) * _RAD * 0.5)
    a = sdlat * sdlat + math.cos(p1) * math.cos(p2) * sdlon * sdlon
    if a > 1.0:
        a = 1.0
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def initial_bearing(lat1, lon1, lat2, lon2):
    p1 = lat1 * _RAD
    p2 = lat2 * _RAD
    dlon = (lon2 - lon1) * _RAD
    y = math.sin(dlon) * math.cos(p2)
    x = math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dlon)
    return math.atan2(y, x)


def project_segment(plat, plon, alat, alon, blat, blon):
    """Closest point to ``p`` on segment a-b.

    The parameter is found in a tangent plane centred on ``p``; the returned
    distance is the exact haversine to the chosen point.

    Returns ``(t, qlat, qlon, dist_m)``.
    """
    kx = math.cos(plat * _RAD)
    xa = (alon - plon) * kx
    ya = alat - plat
    dx = (blon - alon) * kx
    dy = blat - alat
    den = dx * dx + dy * dy
    if den == 0.0:
        t = 0.0
    else:
        t = -(xa * dx + ya * dy) / den
    if t <= 0.0:
        t = 0.0
        qlat, qlon = alat, alon
    elif t >= 1.0:
        t = 1.0
        qlat, qlon = blat, blon
    else:
        qlat = alat + t * dy
        qlon = alon + t * (blon - alon)
    return t, qlat, qlon, haversine(plat, plon, qlat, qlon)


def project_polyline(plat, plon, lats, lons):
    """Closest point on a polyline; ties go to the lowest segment index.

    Returns ``(segment_index, t, qlat, qlon, dist_m)``.
    """
    best = None
    for i in range(len(lats) - 1):
        t, qlat, qlon, d = project_segment(
            plat, plon, lats[i], lons[i], lats[i + 1], lons[i + 1])
        if best is None or d < best[4]:
            best = (i, t, qlat, qlon, d)
    return best


class Dijkstra:
    """Bounded multi-source shortest paths over a CSR digraph.

    Not safe to share between threads.
    """

    def __init__(self, indptr, arc_to, arc_w):
        self.indptr = [int(v) for v in indptr]
        self.arc_to = [int(v) for v in arc_to]
        self.arc_w = [float(v) for v in arc_w]
        self.n_nodes = len(self.indptr) - 1

    def run(self, sources, source_costs, targets, limit):
        """Distances from the seeded sources to each target.

        Sources start with the given costs. The search stops once every
        target is settled or the frontier exceeds ``limit``; targets not
        reached within ``limit`` get ``inf``.
        """
        indptr, arc_to, arc_w = self.indptr, self.arc_to, self.arc_w
        dist = {}
        heap = []
        for node, cost in zip(sources, source_costs):
            if cost <= limit and cost < dist.get(node, INF):
                dist[node] = cost
                heap.append((cost, node))
        heapq.heapify(heap)
        remaining = set(targets)
        done = set()
        while heap and remaining:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            remaining.discard(u)
            for k in range(indptr[u], indptr[u + 1]):
                nd = d + arc_w[k]
                if nd <= limit:
                    v = arc_to[k]
                    if nd < dist.get(v, INF):
                        dist[v] = nd
                        heapq.heappush(heap, (nd, v))
        out = []
        for t in targets:
            out.append(dist[t] if t in done else INF)
        return out


def viterbi(emissions, transitions):
    """Most likely state sequence of one observation chain.

    ``emissions[t][j]`` is the log-probability of state ``j`` at step ``t``;
    ``transitions[t - 1][i][j]`` the log-probability of moving from state
    ``i`` at step ``t - 1`` to ``j`` at step ``t``. On ties (within ``TIE_TOL``) the
    lowest state index wins, at the latest step first.

    Decoding stops at the first step where no state has a finite score.
    Returns ``(path, n_decoded)``; ``path`` covers steps ``[0, n_decoded)``.
    """
    n = len(emissions)
    if n == 0:
        return [], 0
    delta = [float(v) for v in emissions[0]]
    back = []
    decoded = n
    for t in range(1, n):
        em = emissions[t]
        tr = transitions[t - 1]
        k_prev = len(delta)
        new = []
        ptr = []
        alive = False
        for j in range(len(em)):
            best = NEG_INF
            arg = -1
            for i in range(k_prev):
                s = delta[i] + tr[i][j]
                if _beats(s, best):
                    best = s
                    arg = i
            if arg >= 0:
                best = best + em[j]
                alive = alive or best > NEG_INF
            new.append(best)
            ptr.append(arg)
        if not alive:
            decoded = t
            break
        delta = new
        back.append(ptr)
    best = NEG_INF
    state = 0
    for j, v in enumerate(delta):
        if _beats(v, best):
            best = v
            state = j
    path = [state]
    for ptr in reversed(back):
        state = ptr[state]
        path.append(state)
    path.reverse()
    return path, decoded
