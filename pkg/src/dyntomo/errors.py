"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
I/O problems exit 3, solver divergence exits 4.
"""


class DynTomoError(Exception):
    """Base class for package errors."""


class ConfigError(DynTomoError):
    """Invalid configuration value, schema violation or inconsistent request."""


class ShapeError(DynTomoError):
    """Array shape incompatible with the requested operation."""


class DataError(DynTomoError):
    """Data values violate a contract (non-finite, non-positive intensity, ...)."""


class ScheduleIndexError(DynTomoError, IndexError):
    """Projection index outside the schedule bounds."""


class AngleLookupError(DynTomoError, KeyError):
    """Requested angle not present in a schedule within the matching tolerance."""

    def __str__(self):  # KeyError quotes its payload; keep the message readable
        return Exception.__str__(self)


class PartitionError(DynTomoError):
    """Frame partition does not fit the available projections."""


class SolverDiverged(DynTomoError):
    """Iterative solver objective blew up past the divergence guard."""
