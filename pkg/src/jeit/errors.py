"""Exception types shared across the package."""


class JeitError(Exception):
    """Base class for all package-specific errors."""


class TruncatedRecord(JeitError):
    """Binary event payload length is not a whole number of records."""


class OutOfBounds(JeitError):
    """Event coordinates fall outside the declared sensor resolution."""


class InvalidWindow(JeitError):
    """Aggregation window is degenerate (non-positive duration or no bins)."""


class BadConfig(JeitError):
    """Configuration values violate a documented constraint."""


class NonPositiveInput(JeitError):
    """An operation that requires strictly positive intensities got zeros."""


class ShapeMismatch(JeitError):
    """Array shapes are incompatible with the declared contract."""


class NonScalarLoss(JeitError):
    """Backpropagation was requested from a non-scalar node."""


class DomainError(JeitError):
    """Numeric input outside the mathematical domain of the operation."""


class PlanMismatch(JeitError):
    """A symbol payload does not line up with its length plan."""


class EmptyDataset(JeitError):
    """Training or evaluation was requested on an empty sample set."""


class MissingFile(JeitError):
    """A manifest references a file that does not exist."""
