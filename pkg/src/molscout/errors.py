"""Exception hierarchy shared across the package.

CLI exit-code mapping: ValidationError and its subclasses are user-input
problems (exit 1), NumericalFailure is a solver breakdown (exit 3),
everything else is a runtime fault (exit 2).
"""


class MolscoutError(Exception):
    """Base class for all package errors."""


class ValidationError(MolscoutError):
    """Invalid user-supplied data or arguments."""


class IngestError(ValidationError):
    """File-level ingestion problem; carries a 1-based data-row number."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DuplicateIdError(IngestError):
    pass


class ParseError(IngestError):
    pass


class MissingColumnError(IngestError):
    pass


class RaggedRowError(IngestError):
    pass


class UnknownMoleculeError(ValidationError):
    pass


class DuplicateResultError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class NoParsedSamplesError(ValidationError):
    pass


class MissingProfileError(ValidationError):
    pass


class MissingFeatureError(ValidationError):
    pass


class EmptyTrainingSetError(ValidationError):
    pass


class AllColumnsConstantError(ValidationError):
    pass


class RoundSequenceError(ValidationError):
    """Campaign round state-machine violation."""


class DegenerateStatisticError(MolscoutError):
    """Statistic undefined on this input (e.g. zero rank variance)."""


class NumericalFailureError(MolscoutError):
    """Linear-algebra or optimizer breakdown that jitter escalation could not fix."""


class TransportError(MolscoutError):
    """Oracle endpoint unreachable after retries; carries the last HTTP status."""

    def __init__(self, message: str, last_status: int | None = None):
        super().__init__(message)
        self.last_status = last_status


class BusyError(MolscoutError):
    """A conflicting job or writer currently owns the resource."""
