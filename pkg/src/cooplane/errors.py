"""Exception hierarchy shared by all subsystems."""


class CoopLaneError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CoopLaneError, ValueError):
    """Input outside the mathematical domain of an estimator."""


class NoDetection(CoopLaneError):
    """Target is outside the camera field of view or depth range."""


class InsufficientHistory(CoopLaneError):
    """Tracker does not yet hold enough samples."""


class OrderingError(CoopLaneError, ValueError):
    """Samples arrived with non-increasing timestamps."""


class NoSample(CoopLaneError):
    """Sensor has no reading at the requested time."""


class InputError(CoopLaneError, ValueError):
    """Malformed or empty input."""


class VocabularyError(CoopLaneError, KeyError):
    """Unknown label for an ontology, embedding model or likelihood table."""

    def __str__(self):
        return Exception.__str__(self)


class InfeasibleFrame(CoopLaneError, LookupError):
    """Frame is not present in the compiled lookup table."""


class CorruptTable(CoopLaneError):
    """Lookup table content violates its invariants."""


class FrameTooLarge(CoopLaneError):
    """Declared wire frame length exceeds the protocol cap."""


class DecodeError(CoopLaneError):
    """Wire frame body is not a valid message."""


class LinkUnusable(CoopLaneError):
    """Too many echo probes were lost."""
