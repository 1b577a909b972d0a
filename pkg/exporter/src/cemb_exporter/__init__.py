"""Offline producer of CEMB embedding files and LLM-generated concept texts."""

__version__ = "0.1.0"


class ExporterError(Exception):
    """Base class for exporter failures."""


class AlignmentError(ExporterError):
    """Embeddings do not line up with the records they describe."""


class GenerationError(ExporterError):
    """The LLM endpoint kept returning malformed concept JSON."""
