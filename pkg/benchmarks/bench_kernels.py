"""Compare the compiled kernels with the pure-Python fallback.

Run:  python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed on identical inputs under both backends, then a full
map-matching workload (grid network, noisy random-walk trips) is timed
end to end. The end-to-end run uses a subprocess per backend because the
backend is fixed at import.
"""
from __future__ import annotations

import argparse
import os
import random
import subprocess
import sys
import timeit

from trace_enrich import _pykernels as py

try:
    from trace_enrich import _kernels as cy
except ImportError:
    cy = None

END_TO_END = """
import random, time
from trace_enrich import kernels
from trace_enrich.matching import MapMatcher, TracePoint
from trace_enrich.synthetic import grid_network, random_walk_trip
net = grid_network(10, 10, 200.0)
rng = random.Random(7)
trips = [random_walk_trip(net, rng, 100, step_m=15, noise_m=5.0) for _ in range(60)]
m = MapMatcher(net)
t0 = time.perf_counter()
for t in trips:
    m.match([TracePoint(ms, p) for ms, p in zip(t.timestamps_ms, t.points)])
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def _graph(rng, n):
    arcs = sorted((u, v, rng.uniform(10, 300)) for u in range(n)
                  for v in rng.sample(range(n), 4) if v != u)
    indptr = [0] * (n + 1)
    for u, _, _ in arcs:
        indptr[u + 1] += 1
    for i in range(n):
        indptr[i + 1] += indptr[i]
    return indptr, [a[1] for a in arcs], [a[2] for a in arcs]


def workloads(rng):
    pts = [(rng.uniform(42, 42.3), rng.uniform(-83.8, -83.5)) for _ in range(2000)]
    poly_lat = [42.28 + i * 1e-4 for i in range(12)]
    poly_lon = [-83.74 + (i % 3) * 1e-4 for i in range(12)]
    indptr, to, w = _graph(rng, 3000)
    srcs = [rng.sample(range(3000), 2) for _ in range(50)]
    tgts = [rng.sample(range(3000), 8) for _ in range(50)]
    ks = [4] * 60
    em = [[rng.uniform(-10, 0) for _ in range(k)] for k in ks]
    tr = [[[rng.uniform(-10, 0) for _ in range(4)] for _ in range(4)] for _ in ks[1:]]

    def make(mod):
        dj = mod.Dijkstra(indptr, to, w)
        return {
            "haversine x2000": lambda: [mod.haversine(a, b, 42.28, -83.74) for a, b in pts],
            "project_polyline x2000": lambda: [mod.project_polyline(a, b, poly_lat, poly_lon)
                                               for a, b in pts],
            "dijkstra x50 (3000 nodes)": lambda: [dj.run(s, [0.0, 5.0], t, 2000.0)
                                                  for s, t in zip(srcs, tgts)],
            "viterbi 60x4": lambda: mod.viterbi(em, tr),
        }
    return make


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    make = workloads(random.Random(0))
    if cy is None:
        print("compiled extension not built; only the Python backend is available")
    rows = []
    for name, fn_py in make(py).items():
        t_py = min(timeit.repeat(fn_py, number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(make(cy)[name], number=1, repeat=args.repeat)) if cy else None
        rows.append((name, t_py, t_cy))
    print(f"{'kernel':28s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}")
    for name, t_py, t_cy in rows:
        if t_cy:
            print(f"{name:28s} {t_py:10.4f} {t_cy:11.4f} {t_py / t_cy:7.1f}x")
        else:
            print(f"{name:28s} {t_py:10.4f} {'-':>11s} {'-':>8s}")

    print("\nend to end: match 60 trips x 100 fixes on a 10x10 grid")
    for pure in ("1", ""):
        env = dict(os.environ)
        if pure:
            env["TRACE_ENRICH_PURE_PYTHON"] = "1"
        else:
            env.pop("TRACE_ENRICH_PURE_PYTHON", None)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:9s} {float(out[1]):.3f} s")


if __name__ == "__main__":
    main()
