"""Error types shared across the package.

The split mirrors the CLI exit codes: configuration problems (bad keys,
impossible filter specs, invalid privacy budgets) are distinct from data
problems (malformed CSV rows, out-of-scale labels, too few heartbeats).
Programming-contract violations such as layout mismatches raise plain
ValueError.
"""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class DataError(ValueError):
    """Input data is malformed, out of scale, or otherwise unusable."""


class InsufficientDataError(DataError):
    """Too little data to compute the requested quantity."""
