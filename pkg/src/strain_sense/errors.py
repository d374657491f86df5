"""Exception hierarchy shared by every stage of the pipeline."""


class StrainSenseError(Exception):
    """Base class for all domain errors raised by this package."""


class MalformedInputError(StrainSenseError, ValueError):
    """Input is empty, non-finite or otherwise unusable."""


class ShapeError(StrainSenseError, ValueError):
    pass


class ConfigurationError(StrainSenseError, ValueError):
    pass


class DataError(StrainSenseError, ValueError):
    """A dataset violates a labelling or class-coverage requirement."""


class FormatError(StrainSenseError, ValueError):
    """A file on disk does not follow the expected layout."""


class StateError(StrainSenseError, RuntimeError):
    pass


class StreamError(StrainSenseError, RuntimeError):
    """Fatal condition while consuming a live sample stream."""
