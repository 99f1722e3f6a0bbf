"""Exception hierarchy shared across the package."""


class PcassocError(Exception):
    """Base class for all package-specific errors."""


class DataError(PcassocError):
    """Invalid, inconsistent, or unparseable input data."""


class NumericalError(PcassocError):
    """A numerical routine could not produce a trustworthy result."""


class AccuracyError(NumericalError):
    """Requested accuracy was not reached within the work budget.

    Carries the best available estimate and the error bound that was
    actually achieved, so callers can decide to accept the result anyway.
    """

    def __init__(self, message, value=None, achieved=None):
        super().__init__(message)
        self.value = value
        self.achieved = achieved
