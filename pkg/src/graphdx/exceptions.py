"""Exception hierarchy shared across the library."""


class GraphDxError(Exception):
    """Base class for all library errors."""


class ParseError(GraphDxError):
    """A record line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class RecordError(GraphDxError):
    """A record parsed but violates record invariants (empty sets, duplicates)."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NotFoundError(GraphDxError):
    """A node id or external id is unknown."""


class ShapeError(GraphDxError):
    """Vector/matrix dimensions do not match the model dimension."""


class EmptyEvidenceError(GraphDxError):
    """An operation that requires at least one symptom received none."""


class NoNegativeError(GraphDxError):
    """No eligible negative disease exists for a user."""


class SessionStateError(GraphDxError):
    """A session operation was invoked in the wrong status."""


class SelectionError(GraphDxError):
    """An answer selected symptoms outside the last suggestion list."""


class SkipPair(GraphDxError):
    """No eligible contrastive pair exists for a symptom; skip it."""


class UndefinedMetricError(GraphDxError):
    """A ranking metric was requested with an empty ground-truth set."""


class UndefinedInputError(GraphDxError):
    """A statistic was requested for inputs with zero marginal count."""


class TrainingDivergedError(GraphDxError):
    """Training produced a non-finite loss."""
