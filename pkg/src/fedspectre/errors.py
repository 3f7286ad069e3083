"""Exception hierarchy shared across the package."""


class FedSpectreError(Exception):
    """Base class for every error raised by fedspectre."""


class ArchitectureError(FedSpectreError, ValueError):
    pass


class ShapeError(FedSpectreError, ValueError):
    pass


class DegenerateBatchError(FedSpectreError, ValueError):
    pass


class InvalidLabelError(FedSpectreError, ValueError):
    pass


class InvalidCacheError(FedSpectreError, ValueError):
    pass


class ParseError(FedSpectreError, ValueError):
    """Malformed input file. ``row`` is the 1-based data row, when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SpecError(FedSpectreError, ValueError):
    pass


class QuotaError(FedSpectreError, ValueError):
    pass


class ProtocolError(FedSpectreError, ValueError):
    pass


class InsufficientParticipantsError(ProtocolError):
    pass


class ConfigError(FedSpectreError, ValueError):
    pass


class ContextError(FedSpectreError, ValueError):
    pass


class ThresholdError(FedSpectreError, ValueError):
    pass


class UndefinedMetricError(FedSpectreError, ValueError):
    pass
