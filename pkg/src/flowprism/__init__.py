"""Per-flow traffic feature extraction with per-feature cost profiling."""

__version__ = "0.1.0"
