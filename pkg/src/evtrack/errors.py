"""Exception types shared across the package."""


class EvtrackError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EvtrackError):
    """Invalid, unknown, or out-of-range configuration value."""


class IntegrationError(EvtrackError):
    """Numerical integration produced a non-finite state."""


class SensorError(EvtrackError):
    """Sensor input mismatch (shapes, timestamps, or value ranges)."""


class ContractViolation(EvtrackError):
    """A caller broke an interface precondition."""


class CheckpointError(EvtrackError):
    """Checkpoint file is malformed, truncated, or version-incompatible."""
