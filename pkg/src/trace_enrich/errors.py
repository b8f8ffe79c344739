"""Exception types raised across the package.

The CLI maps these onto its exit codes (see :mod:`trace_enrich.cli`).
"""


class TraceEnrichError(Exception):
    """Base class for every error raised by this package."""


class DegenerateSegment(TraceEnrichError, ValueError):
    """Bearing requested for two identical points."""


class ParseError(TraceEnrichError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.message = message
        super().__init__(f"{self.path}:{line}: {message}")


class EmptyNetwork(TraceEnrichError):
    """The map extract contains no drivable ways."""


class NoDefault(TraceEnrichError, LookupError):
    """No default speed limit exists for the highway class."""


class TagParseError(TraceEnrichError, ValueError):
    def __init__(self, raw, key=None):
        self.raw = raw
        self.key = key
        where = f" in {key!r}" if key else ""
        super().__init__(f"cannot parse speed value {raw!r}{where}")


class MissingLimit(TraceEnrichError, LookupError):
    """Edge carries no speed tags and its class has no default."""


class EmptyTrace(TraceEnrichError, ValueError):
    pass


class OrderError(TraceEnrichError, ValueError):
    def __init__(self, message, trip=None):
        self.trip = trip
        super().__init__(message)


class EmptyHistogram(TraceEnrichError):
    pass


class UncoveredTrip(TraceEnrichError):
    pass


class ShapeError(TraceEnrichError, ValueError):
    pass


class ElevationUnresolved(TraceEnrichError):
    """Too many points could not be given an elevation."""


class ConfigError(TraceEnrichError):
    pass
