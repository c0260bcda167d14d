"""Error types shared across the toolkit.

The command-line layer maps each of these onto a distinct exit code, so
library code should raise the most specific type that applies.
"""


class FlowUqError(Exception):
    """Base class for all toolkit-specific errors."""


class ConfigError(FlowUqError):
    """A configuration file or option is malformed or inconsistent."""


class DataError(FlowUqError):
    """Input data violates a structural requirement (schema, emptiness, ...)."""


class CapabilityError(FlowUqError):
    """A model was asked for a quantity it cannot produce."""
