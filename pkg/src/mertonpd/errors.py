"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested operation."""


class NotPositiveSemidefiniteError(DomainError):
    """Cholesky factorization failed even at the largest allowed jitter."""

    def __init__(self, message, failed_jitter):
        super().__init__(message)
        self.failed_jitter = failed_jitter


class HistoryFormatError(ValueError):
    """A default-history file is malformed or fails validation."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
