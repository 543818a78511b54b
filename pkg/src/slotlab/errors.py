"""Error hierarchy shared across the package.

The CLI maps these onto distinct exit codes: configuration problems,
bad data files, and everything else.
"""


class SlotLabError(Exception):
    """Base class for all package errors."""


class ConfigError(SlotLabError):
    """Invalid configuration: bad ratios, empty pools, unknown modes."""


class DataError(SlotLabError):
    """Malformed resource or dataset files; message names file and line."""
