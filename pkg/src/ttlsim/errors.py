"""Exception hierarchy shared by the simulator, solvers and CLI."""


class TTLSimError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(TTLSimError, ValueError):
    """Invalid workload, controller or experiment configuration."""

    exit_code = 2


class TraceParseError(ConfigError):
    """A trace line could not be parsed."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class TraceValidationError(TraceParseError):
    """A trace parsed but violates an ordering or range constraint."""


class InfeasibleError(TTLSimError, ValueError):
    """A target (hit rate, capacity) cannot be reached by the solver."""

    exit_code = 3

    def __init__(self, message, supremum=None):
        super().__init__(message)
        self.supremum = supremum


class SimulationError(TTLSimError, RuntimeError):
    """Internal consistency failure inside a simulation (e.g. time regression)."""
