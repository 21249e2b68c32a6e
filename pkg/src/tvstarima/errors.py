"""Exception hierarchy shared by every stage of the pipeline."""


class TvStarimaError(Exception):
    """Base class for all package errors."""


class ParameterError(TvStarimaError, ValueError):
    """An argument is outside its admissible range."""


class DataError(TvStarimaError, ValueError):
    """Input data violate a schema or shape contract."""


class ParseError(DataError):
    """A file row could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    """A file is structurally invalid (missing header, stations, rows)."""


class OrderingError(DataError):
    """Slot indices are not strictly increasing for a station."""


class GapError(SchemaError):
    """A station stream skips one or more slots."""


class ShapeError(DataError):
    """Array lengths or dimensions disagree."""


class DegenerateSeriesError(DataError):
    """A series has zero variance where a correlation is required."""


class SlotLookupError(TvStarimaError, LookupError):
    """A slot falls outside the partitioned day."""


class EstimationError(TvStarimaError, ArithmeticError):
    """Least-squares estimation failed or is not identifiable."""


class DependencyError(TvStarimaError):
    """A pipeline stage ran before the stage that produces its inputs."""
