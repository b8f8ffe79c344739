# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled hot kernels. Call-compatible with ``_pykernels``."""
from libc.math cimport sin, cos, asin, sqrt, atan2, fabs, INFINITY, M_PI
from libcpp.vector cimport vector
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair

import numpy as np
cimport numpy as cnp

cnp.import_array()

EARTH_RADIUS_M = 6371000.0

cdef double _R = 6371000.0
cdef double _RAD = M_PI / 180.0


cdef inline double _hav(double lat1, double lon1, double lat2, double lon2) noexcept nogil:
    cdef double p1 = lat1 * _RAD
    cdef double p2 = lat2 * _RAD
    cdef double sdlat = sin((p2 - p1) * 0.5)
    cdef double sdlon = sin((lon2 - lon1) * _RAD * 0.5)
    cdef double a = sdlat * sdlat + cos(p1) * cos(p2) * sdlon * sdlon
    if a > 1.0:
        a = 1.0
    return 2.0 * _R * asin(sqrt(a))


cpdef double haversine(double lat1, double lon1, double lat2, double lon2):
    return _hav(lat1, lon1, lat2, lon2)


cpdef double initial_bearing(double lat1, double lon1, double lat2, double lon2):
    cdef double p1 = lat1 * _RAD
    cdef double p2 = lat2 * _RAD
    cdef double dlon = (lon2 - lon1) * _RAD
    cdef double y = sin(dlon) * cos(p2)
    cdef double x = cos(p1) * sin(p2) - sin(p1) * cos(p2) * cos(dlon)
    return atan2(y, x)


cdef inline void _project(double plat, double plon, double alat, double alon,
                          double blat, double blon, double kx,
                          double* t_out, double* qlat, double* qlon,
                          double* d_out) noexcept nogil:
    cdef double xa = (alon - plon) * kx
    cdef double ya = alat - plat
    cdef double dx = (blon - alon) * kx
    cdef double dy = blat - alat
    cdef double den = dx * dx + dy * dy
    cdef double t
    if den == 0.0:
        t = 0.0
    else:
        t = -(xa * dx + ya * dy) / den
    if t <= 0.0:
        t = 0.0
        qlat[0] = alat
        qlon[0] = alon
    elif t >= 1.0:
        t = 1.0
        qlat[0] = blat
        qlon[0] = blon
    else:
        qlat[0] = alat + t * dy
        qlon[0] = alon + t * (blon - alon)
    t_out[0] = t
    d_out[0] = _hav(plat, plon, qlat[0], qlon[0])


cpdef tuple project_segment(double plat, double plon, double alat, double alon,
                            double blat, double blon):
    cdef double t, qlat, qlon, d
    _project(plat, plon, alat, alon, blat, blon, cos(plat * _RAD),
             &t, &qlat, &qlon, &d)
    return (t, qlat, qlon, d)


def project_polyline(double plat, double plon, lats, lons):
    cdef double[::1] la = np.ascontiguousarray(lats, dtype=np.float64)
    cdef double[::1] lo = np.ascontiguousarray(lons, dtype=np.float64)
    cdef Py_ssize_t n = la.shape[0]
    cdef Py_ssize_t i, best_i = -1
    cdef double kx = cos(plat * _RAD)
    cdef double t, qlat, qlon, d
    cdef double bt = 0.0, bqlat = 0.0, bqlon = 0.0, bd = INFINITY
    for i in range(n - 1):
        _project(plat, plon, la[i], lo[i], la[i + 1], lo[i + 1], kx,
                 &t, &qlat, &qlon, &d)
        if best_i < 0 or d < bd:
            best_i = i
            bt = t
            bqlat = qlat
            bqlon = qlon
            bd = d
    if best_i < 0:
        return None
    return (best_i, bt, bqlat, bqlon, bd)


ctypedef pair[double, Py_ssize_t] _Entry


cdef class Dijkstra:
    """Bounded multi-source shortest paths over a CSR digraph.

    Keeps a per-instance workspace; not safe to share between threads.
    """
    cdef Py_ssize_t[::1] indptr
    cdef Py_ssize_t[::1] arc_to
    cdef double[::1] arc_w
    cdef double[::1] dist
    cdef char[::1] done
    cdef readonly Py_ssize_t n_nodes

    def __init__(self, indptr, arc_to, arc_w):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.intp)
        self.arc_to = np.ascontiguousarray(arc_to, dtype=np.intp)
        self.arc_w = np.ascontiguousarray(arc_w, dtype=np.float64)
        self.n_nodes = self.indptr.shape[0] - 1
        self.dist = np.full(self.n_nodes, np.inf)
        self.done = np.zeros(self.n_nodes, dtype=np.int8)

    def run(self, sources, source_costs, targets, double limit):
        cdef vector[Py_ssize_t] touched
        cdef vector[Py_ssize_t] tgt
        cdef priority_queue[_Entry] heap
        cdef Py_ssize_t u, v, k, node, remaining
        cdef double d, nd, cost
        cdef list out
        for node in targets:
            tgt.push_back(node)
        for node, cost in zip(sources, source_costs):
            if cost <= limit and cost < self.dist[node]:
                if self.dist[node] == INFINITY:
                    touched.push_back(node)
                self.dist[node] = cost
                heap.push(_Entry(-cost, node))
        # Count distinct targets; the done-flag doubles as a marker here.
        remaining = 0
        for k in range(<Py_ssize_t>tgt.size()):
            node = tgt[k]
            if self.done[node] == 0:
                self.done[node] = 2
                remaining += 1
        while not heap.empty() and remaining > 0:
            d = -heap.top().first
            u = heap.top().second
            heap.pop()
            if self.done[u] == 1:
                continue
            if self.done[u] == 2:
                remaining -= 1
            self.done[u] = 1
            touched.push_back(u)
            for k in range(self.indptr[u], self.indptr[u + 1]):
                nd = d + self.arc_w[k]
                if nd <= limit:
                    v = self.arc_to[k]
                    if nd < self.dist[v]:
                        if self.dist[v] == INFINITY:
                            touched.push_back(v)
                        self.dist[v] = nd
                        heap.push(_Entry(-nd, v))
        out = []
        for k in range(<Py_ssize_t>tgt.size()):
            node = tgt[k]
            out.append(self.dist[node] if self.done[node] == 1 else INFINITY)
        for k in range(<Py_ssize_t>touched.size()):
            node = touched[k]
            self.dist[node] = INFINITY
            self.done[node] = 0
        for k in range(<Py_ssize_t>tgt.size()):
            self.done[tgt[k]] = 0
        return out


cdef double TIE_TOL = 1e-10


cdef inline bint _beats(double s, double best) nogil:
    if best == -INFINITY:
        return s > best
    return s > best + TIE_TOL * (fabs(best) if fabs(best) > 1.0 else 1.0)


def viterbi(emissions, transitions):
    cdef Py_ssize_t n = len(emissions)
    if n == 0:
        return [], 0
    cdef double[::1] delta = np.array(emissions[0], dtype=np.float64)
    cdef double[::1] em
    cdef double[:, :] tr
    cdef double[::1] new
    cdef Py_ssize_t[::1] ptr
    cdef Py_ssize_t t, i, j, arg, k_prev, k_cur
    cdef Py_ssize_t decoded = n
    cdef double best, s
    cdef bint alive
    back = []
    for t in range(1, n):
        em = np.asarray(emissions[t], dtype=np.float64)
        tr = np.asarray(transitions[t - 1], dtype=np.float64).reshape(
            delta.shape[0], em.shape[0])
        k_prev = delta.shape[0]
        k_cur = em.shape[0]
        new = np.empty(k_cur, dtype=np.float64)
        ptr = np.empty(k_cur, dtype=np.intp)
        alive = False
        for j in range(k_cur):
            best = -INFINITY
            arg = -1
            for i in range(k_prev):
                s = delta[i] + tr[i, j]
                if _beats(s, best):
                    best = s
                    arg = i
            if arg >= 0:
                best = best + em[j]
                if best > -INFINITY:
                    alive = True
            new[j] = best
            ptr[j] = arg
        if not alive:
            decoded = t
            break
        delta = new
        back.append(ptr)
    best = -INFINITY
    cdef Py_ssize_t state = 0
    for j in range(delta.shape[0]):
        if _beats(delta[j], best):
            best = delta[j]
            state = j
    path = [state]
    cdef Py_ssize_t[::1] p
    for idx in range(len(back) - 1, -1, -1):
        p = back[idx]
        state = p[state]
        path.append(state)
    path.reverse()
    return path, decoded
