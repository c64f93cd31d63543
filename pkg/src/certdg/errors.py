"""Exception hierarchy shared by every module."""


class CertDGError(Exception):
    """Base class for all errors raised by certdg."""


class InvalidArgument(CertDGError, ValueError):
    pass


class UnsupportedLoss(CertDGError, ValueError):
    pass


class InfeasibleTransport(CertDGError):
    pass


class DegenerateHead(CertDGError):
    pass


class UnboundedSurrogate(CertDGError):
    """Raised when the surrogate ascent runs away (gamma below the concavity threshold)."""


class TrainingDiverged(CertDGError):
    pass


class ParseError(CertDGError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
