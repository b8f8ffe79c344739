"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it was built; otherwise
the pure-Python ``_pykernels`` twin. Set ``TRACE_ENRICH_PURE_PYTHON=1`` to
force the fallback.
"""
import os

if os.environ.get("TRACE_ENRICH_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        from . import _pykernels as _impl

BACKEND = "compiled" if _impl.__name__.endswith("._kernels") else "python"

haversine = _impl.haversine
initial_bearing = _impl.initial_bearing
project_segment = _impl.project_segment
project_polyline = _impl.project_polyline
Dijkstra = _impl.Dijkstra
viterbi = _impl.viterbi

__all__ = [
    "BACKEND",
    "Dijkstra",
    "haversine",
    "initial_bearing",
    "project_polyline",
    "project_segment",
    "viterbi",
]
