"""Adaptive TTL cache simulation: workloads, d-TTL/f-TTL controllers, baselines and oracles."""

from .errors import (ConfigError, InfeasibleError, SimulationError, TraceParseError,
                     TraceValidationError, TTLSimError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "InfeasibleError", "SimulationError", "TraceParseError",
           "TraceValidationError", "TTLSimError", "__version__"]
