"""Exception types shared across the package."""


class TamperfoolError(Exception):
    """Base class for all package errors."""


class DimensionError(TamperfoolError):
    """Shapes are incompatible; the message names the offending axis."""


class DomainError(TamperfoolError):
    """An input value lies outside the operation's domain."""


class GraphError(TamperfoolError):
    """A computation-graph contract was violated (e.g. backward on a non-scalar)."""


class UpdateError(TamperfoolError):
    """An optimizer update failed; the message names the parameter."""


class TrainingError(TamperfoolError):
    """Training diverged; carries the epoch index in the message."""


class AttackError(TamperfoolError):
    """An attack produced a non-finite loss or violated its budget."""


class ModelFormatError(TamperfoolError):
    """A model file is corrupt; the message carries the byte offset."""


class SearchError(TamperfoolError):
    """No grid point satisfied the search constraint."""
