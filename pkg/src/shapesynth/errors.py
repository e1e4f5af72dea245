"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to:
2 = schema/usage problems, 3 = data/infeasibility problems, 4 = anything else.
"""


class ShapeSynthError(Exception):
    exit_code = 4


class SchemaError(ShapeSynthError):
    """Input file or config does not match its documented schema."""

    exit_code = 2


class DataError(ShapeSynthError):
    """Input parses but its values are unusable (duplicates, negatives, empty)."""

    exit_code = 3


class InfeasibleError(DataError):
    """A fit or reconciliation target cannot be met by the data."""
