"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class GsaError(Exception):
    """Base class for all errors raised by gsagg."""


class SingularMatrix(GsaError):
    pass


class InvalidParams(GsaError, ValueError):
    pass


class InfeasibleS(InvalidParams):
    """Raised for S = 1: no secure aggregation scheme exists."""


class InvalidPivot(GsaError, ValueError):
    pass


class AlignmentRankFailure(GsaError):
    pass


class ExhaustedAttempts(GsaError):
    """Raised by build_validated; ``failed_check`` names the last failing check."""

    def __init__(self, message: str, failed_check: str, attempts: int):
        super().__init__(message)
        self.failed_check = failed_check
        self.attempts = attempts


class InvalidWitnessParams(GsaError, ValueError):
    pass


class LengthMismatch(GsaError, ValueError):
    pass


class TooFewSurvivors(GsaError):
    pass


class NotASurvivor(GsaError, ValueError):
    pass


class SingularDecodeMatrix(GsaError):
    pass


class TraceMismatch(GsaError):
    pass


class TooLargeToEnumerate(GsaError):
    pass


class ProtocolViolation(GsaError):
    pass


class ConnectionLost(GsaError):
    pass


class KeyFileMismatch(GsaError, ValueError):
    """A key file does not belong to the loaded fixture or user."""
