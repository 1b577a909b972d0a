"""Exception hierarchy shared by all conceptcil modules."""


class ConceptCilError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ConceptCilError):
    """Operand dimensions are incompatible."""


class LabelError(ConceptCilError):
    """A class label is outside the valid range."""


class RangeError(ConceptCilError):
    """A scalar argument is outside its allowed range."""


class ConceptError(ConceptCilError):
    """Invalid concept ingestion (empty text, duplicate class, too many concepts)."""


class AlignmentError(ConceptCilError):
    """Embedding rows do not line up with the records they should describe."""


class ParseError(ConceptCilError):
    """A file is malformed; the message names the offending offset or field."""


class IntegrityError(ConceptCilError):
    """A parsed file is self-inconsistent (dangling ids, duplicates)."""


class ScheduleError(ConceptCilError):
    """A task schedule violates the disjoint-cover contract."""


class ConfigError(ConceptCilError):
    """A run configuration value is invalid or inconsistent."""


class DataError(ConceptCilError):
    """Input data violates a precondition (non-finite values, bad counts)."""


class EvalError(ConceptCilError):
    """Evaluation was asked to run on unusable inputs."""
