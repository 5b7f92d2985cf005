"""Exception hierarchy.

Two families matter to callers (and to the CLI exit-code mapping):
``ConfigError`` for invalid parameters/configuration (exit code 2) and
``DataError`` for malformed or inconsistent input data (exit code 3).
"""


class MimostreamError(Exception):
    """Base class for all library errors."""


class ConfigError(MimostreamError):
    """Invalid configuration or parameters."""


class DataError(MimostreamError):
    """Malformed, truncated or inconsistent input data."""
