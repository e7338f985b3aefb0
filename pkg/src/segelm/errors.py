"""Exception hierarchy shared across the pipeline stages."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInputError(PipelineError):
    """An input file contained no data."""


class FormatError(PipelineError):
    """A file is structurally malformed (e.g. ragged CSV rows)."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ParseError(PipelineError):
    """A cell could not be parsed as a number."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        super().__init__(message)
        self.row = row
        self.col = col


class SpecError(PipelineError):
    """A synthetic cohort specification violates its invariants."""


class ConfigError(PipelineError):
    """A configuration value violates its invariants."""


class DimensionError(PipelineError):
    """Array dimensions are incompatible with the requested operation."""


class GroupingError(PipelineError):
    """A bit vector cannot be split into 6-bit groups."""


class NumericalError(PipelineError):
    """A numerical step failed (non-finite values, factorization failure)."""


class PlanError(PipelineError):
    """A cross-validation plan cannot be constructed."""
