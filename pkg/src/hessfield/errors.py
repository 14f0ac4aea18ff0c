"""Exception hierarchy shared by every module."""


class HessfieldError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(HessfieldError, ValueError):
    """Inputs violate an operation's precondition."""


class HypothesisViolation(PreconditionError):
    """The base space is too high-dimensional for the requested avoidance."""


class CertificationError(HessfieldError, RuntimeError):
    """No certified perturbation was found within the retry budget."""


class InvariantViolation(HessfieldError, AssertionError):
    """A computed object failed one of its post-condition checks."""


class FormatError(HessfieldError, ValueError):
    """A serialized document does not follow the exchange format."""
