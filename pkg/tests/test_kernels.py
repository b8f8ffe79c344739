import math
import random

import pytest
from hypothesis import given, strategies as st

from trace_enrich import _pykernels as py
from trace_enrich import kernels

cy = pytest.importorskip("trace_enrich._kernels")

coord = st.tuples(st.floats(-80, 80), st.floats(-179, 179))


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


@given(coord, coord)
def test_haversine(a, b):
    assert cy.haversine(*a, *b) == pytest.approx(py.haversine(*a, *b), rel=1e-12, abs=1e-9)


@given(coord, coord)
def test_bearing(a, b):
    assert cy.initial_bearing(*a, *b) == pytest.approx(py.initial_bearing(*a, *b), abs=1e-12)


@given(st.integers(0, 100_000))
def test_projection(seed):
    rng = random.Random(seed)
    lat0, lon0 = rng.uniform(-60, 60), rng.uniform(-170, 170)
    p = (lat0 + rng.uniform(-0.01, 0.01), lon0 + rng.uniform(-0.01, 0.01))
    lats = [lat0 + rng.uniform(-0.01, 0.01) for _ in range(rng.randint(2, 6))]
    lons = [lon0 + rng.uniform(-0.01, 0.01) for _ in lats]
    a = py.project_polyline(*p, lats, lons)
    b = cy.project_polyline(*p, lats, lons)
    assert a[0] == b[0]
    assert b[1:] == pytest.approx(a[1:], rel=1e-12, abs=1e-9)
    assert cy.project_segment(*p, lats[0], lons[0], lats[1], lons[1]) == pytest.approx(
        py.project_segment(*p, lats[0], lons[0], lats[1], lons[1]), rel=1e-12, abs=1e-9)


def test_projection_endpoints_exact():
    for mod in (py, cy):
        t, qlat, qlon, d = mod.project_segment(1.0, 3.0, 0.0, 0.0, 1.0, 2.0)
        assert (t, qlat, qlon) == (1.0, 1.0, 2.0)


@pytest.mark.parametrize("seed", range(30))
def test_dijkstra(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 40)
    arcs = sorted((rng.randrange(n), rng.randrange(n), rng.uniform(1, 100))
                  for _ in range(rng.randint(1, 4 * n)))
    indptr = [0] * (n + 1)
    for u, _, _ in arcs:
        indptr[u + 1] += 1
    for i in range(n):
        indptr[i + 1] += indptr[i]
    to = [a[1] for a in arcs]
    w = [a[2] for a in arcs]
    dp, dc = py.Dijkstra(indptr, to, w), cy.Dijkstra(indptr, to, w)
    for _ in range(5):
        srcs = rng.sample(range(n), rng.randint(1, min(3, n)))
        costs = [rng.uniform(0, 20) for _ in srcs]
        tgts = [rng.randrange(n) for _ in range(rng.randint(1, 5))]
        limit = rng.choice([50.0, 200.0, math.inf])
        a = dp.run(srcs, costs, tgts, limit)
        b = dc.run(srcs, costs, tgts, limit)
        assert a == b  # workspace reuse must not leak between calls


@given(st.integers(1, 8), st.integers(0, 100_000))
def test_viterbi(n, seed):
    rng = random.Random(seed)
    ks = [rng.randint(1, 5) for _ in range(n)]

    def val():
        return -math.inf if rng.random() < 0.1 else float(rng.randint(-4, 0))

    em = [[rng.uniform(-5, 0) for _ in range(k)] for k in ks]
    tr = [[[val() for _ in range(ks[t])] for _ in range(ks[t - 1])] for t in range(1, n)]
    assert cy.viterbi(em, tr) == py.viterbi(em, tr)


@pytest.mark.parametrize("mod", [py, cy], ids=["python", "compiled"])
def test_viterbi_rounding_ties(mod):
    # state 1 is ahead by a few ULPs only: a tie, so the lower index wins
    a = -3.0892804708270445
    em = [[0.0], [-2.0, -2.0], [0.0]]
    tr = [[[-1.0, -1.0]], [[a], [a + 3e-12]]]
    assert mod.viterbi(em, tr) == ([0, 0, 0], 3)
    tr = [[[-1.0, -1.0]], [[a], [a + 1e-6]]]
    assert mod.viterbi(em, tr) == ([0, 1, 0], 3)
