"""Pipeline configuration: a TOML file plus dotted command-line overrides."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .enrich import Radii
from .errors import ConfigError
from .matching import HmmParams


@dataclass(frozen=True)
class AnalysisParams:
    speed_bin_kmh: float = 1.0
    histogram_bin_kmh: float = 1.0
    time_bin_min: int = 15
    segment_len: int = 240
    horizon_s: float = 30.0
    limit_kmh: float | None = None

    def __post_init__(self):
        for name in ("speed_bin_kmh", "histogram_bin_kmh", "horizon_s"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ValueError(f"analysis.{name} must be positive")
        if not (isinstance(self.time_bin_min, int) and 0 < self.time_bin_min <= 1440
                and 1440 % self.time_bin_min == 0):
            raise ValueError("analysis.time_bin_min must be a positive divisor of 1440")
        if not (isinstance(self.segment_len, int) and self.segment_len > 0):
            raise ValueError("analysis.segment_len must be a positive integer")
        if self.limit_kmh is not None and not self.limit_kmh > 0:
            raise ValueError("analysis.limit_kmh must be positive")


@dataclass(frozen=True)
class EnrichParams:
    max_unresolved_fraction: float = 0.05
    energy_column: str = "energy"

    def __post_init__(self):
        if not 0.0 <= self.max_unresolved_fraction <= 1.0:
            raise ValueError("enrich.max_unresolved_fraction must be in [0, 1]")


@dataclass(frozen=True)
class Paths:
    map: Path | None = None
    trips: tuple[Path, ...] = ()
    output_dir: Path = Path("out")
    elevation_cache: Path | None = None
    bus_stops: Path | None = None
    stats: Path | None = None


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    hmm: HmmParams = field(default_factory=HmmParams)
    radii: Radii = field(default_factory=Radii)
    analysis: AnalysisParams = field(default_factory=AnalysisParams)
    enrich: EnrichParams = field(default_factory=EnrichParams)
    workers: int = 1
    cell_size_m: float = 100.0


_SECTIONS = {"hmm": HmmParams, "radii": Radii, "analysis": AnalysisParams, "enrich": EnrichParams}
_PATH_KEYS = {f.name for f in fields(Paths)}
_TOP_KEYS = {"workers", "cell_size_m"}


def parse_override_value(text: str):
    """TOML literal if the text is one (``10``, ``true``, ``[1, 2]``), else a string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {dotted!r}")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends into a non-table value")
    node[parts[-1]] = value


def _section(cls, values, name):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _path(base: Path, value) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"path values must be non-empty strings, got {value!r}")
    p = Path(value)
    return p if p.is_absolute() else base / p


def build_config(doc: dict, base: Path) -> PipelineConfig:
    unknown = set(doc) - set(_SECTIONS) - _TOP_KEYS - {"paths"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    raw_paths = doc.get("paths", {})
    if not isinstance(raw_paths, dict):
        raise ConfigError("[paths] must be a table")
    bad = set(raw_paths) - _PATH_KEYS
    if bad:
        raise ConfigError(f"unknown key(s) in [paths]: {', '.join(sorted(bad))}")
    kw = {}
    for key, value in raw_paths.items():
        if key == "trips":
            items = [value] if isinstance(value, str) else value
            if not isinstance(items, list):
                raise ConfigError("paths.trips must be a string or a list of strings")
            kw[key] = tuple(_path(base, v) for v in items)
        else:
            kw[key] = _path(base, value)
    sections = {name: _section(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()}
    workers = doc.get("workers", 1)
    if not (isinstance(workers, int) and not isinstance(workers, bool) and workers >= 1):
        raise ConfigError("workers must be an integer >= 1")
    cell = doc.get("cell_size_m", 100.0)
    if not (isinstance(cell, (int, float)) and cell > 0):
        raise ConfigError("cell_size_m must be positive")
    return PipelineConfig(Paths(**kw), workers=workers, cell_size_m=float(cell), **sections)


def load_config(path: str | Path | None, overrides=()) -> PipelineConfig:
    """Read ``path`` (TOML) and apply ``(dotted_key, value)`` overrides.

    Relative paths resolve against the config file's directory (or the
    working directory when no file is given).
    """
    doc: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
    for key, value in overrides:
        apply_override(doc, key, value)
    return build_config(doc, base)
