"""Exception hierarchy shared by the library, the service, and the CLI.

Every error carries a machine-readable ``category`` so that callers (HTTP
handlers, CLI exit codes) can map failures without string matching:

* ``usage``      -- bad arguments or contract violations caught up front
* ``data``       -- unreadable/inconsistent input data or missing resources
* ``degenerate`` -- a scaling/variance quantity collapsed to zero
* ``diverged``   -- the iterate path blew up (mis-set learning rate)
* ``singular``   -- a scaling matrix is singular beyond tolerance
"""

from __future__ import annotations


class StreamqrError(Exception):
    """Base class for all package errors."""

    category = "usage"


class UsageError(StreamqrError, ValueError):
    """Invalid flags, parameters, or call contracts."""

    category = "usage"


class ContractViolationError(UsageError):
    """A documented operation precondition was violated (e.g. shape mismatch)."""


class DataError(StreamqrError):
    """Input data could not be read or is internally inconsistent."""

    category = "data"

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class InsufficientObservationsError(DataError):
    """Fewer observations than the inference recursions require."""


class MissingCriticalValueError(DataError):
    """No table or cache entry for the requested critical value."""


class DegenerateScalingError(StreamqrError):
    """A variance-like quantity is zero/negative where positive is required."""

    category = "degenerate"


class DivergedPathError(StreamqrError):
    """The iterate exceeded the divergence guard; reports the failing step."""

    category = "diverged"

    def __init__(self, step: int, max_abs: float):
        super().__init__(
            f"iterate diverged at step {step} (max |beta| = {max_abs:.3e}); "
            "the initial learning rate is likely too large for the data scale"
        )
        self.step = step
        self.max_abs = max_abs


class SingularScalingError(StreamqrError):
    """A random-scaling matrix (or a restriction of it) is numerically singular."""

    category = "singular"


EXIT_CODE_BY_CATEGORY = {
    "usage": 2,
    "data": 3,
    "degenerate": 4,
    "diverged": 4,
    "singular": 4,
}
