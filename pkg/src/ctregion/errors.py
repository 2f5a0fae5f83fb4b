"""Exception hierarchy for the pipeline.

Two error families matter to the CLI: ValidationError maps to exit code 1
(bad arguments, inconsistent inputs), InputFormatError maps to exit code 2
(unreadable or malformed files).
"""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(PipelineError):
    """Inputs are readable but violate a precondition or invariant."""


class InputFormatError(PipelineError):
    """A file is missing, truncated, or not in the expected format."""


class MalformedHeader(InputFormatError):
    pass


class UnsupportedDatatype(InputFormatError):
    pass


class TruncatedData(InputFormatError):
    pass


class SchemaViolation(InputFormatError):
    pass


class LevelShapeMismatch(InputFormatError):
    pass


class DimsMismatch(ValidationError):
    pass


class MissingRegion(ValidationError):
    pass


class EmptyTarget(ValidationError):
    pass


class GridTooFine(ValidationError):
    pass


class UnknownLevel(ValidationError):
    pass


class NonDivisibleFactor(ValidationError):
    pass


class ChannelMismatch(ValidationError):
    pass


class LevelMismatch(ValidationError):
    pass


class StudyMismatch(ValidationError):
    pass


class LabelCountMismatch(ValidationError):
    pass


class BudgetExceeded(ValidationError):
    pass


class EndpointError(PipelineError):
    """Base class for text-generation endpoint failures."""


class EndpointTimeout(EndpointError):
    pass


class HttpError(EndpointError):
    def __init__(self, status: int, attempts: int, message: str = ""):
        self.status = status
        self.attempts = attempts
        super().__init__(message or f"HTTP {status} after {attempts} attempt(s)")


class EmptyCompletion(EndpointError):
    pass
