"""Deterministic simulator of an attack-aware, 5xx-driven autoscaling loop."""

from .workload import ConfigError, TrafficSpec, build_condition, generate_stream

__all__ = ["ConfigError", "TrafficSpec", "build_condition", "generate_stream"]
__version__ = "0.1.0"
