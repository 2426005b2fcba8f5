"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class GraphFuseError(Exception):
    exit_code = 1


class ConfigError(GraphFuseError):
    """Invalid configuration: unknown keys, out-of-range knobs, bad masks."""

    exit_code = 2


class DataError(GraphFuseError):
    """Malformed or inconsistent corpus files and bundles."""

    exit_code = 3


class UsageError(GraphFuseError):
    """API misuse: empty inputs, non-scalar losses, repeated backward."""

    exit_code = 4


class DimensionError(UsageError):
    """Shape mismatch between operands."""
