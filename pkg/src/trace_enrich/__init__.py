"""Map-match vehicle GPS traces and enrich them with road attributes."""

__version__ = "0.1.0"
