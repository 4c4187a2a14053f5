"""Exception types shared across the package."""


class NoRoot(Exception):
    """The critical-parameter equation theta*k'(theta) = k(theta) has no root.

    Signals a reproduction law outside the model hypotheses (no positive
    critical tilt exists); callers should not extrapolate past it.
    """


class AssumptionViolated(Exception):
    """A model consistency condition failed numerically.

    Carries an optional ``report`` attribute with residual details.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ExactBlowup(Exception):
    """Exact-mode population exceeded the hard particle limit."""


class TooLarge(Exception):
    """Exhaustive enumeration would exceed the term budget."""


class InsufficientData(Exception):
    """Not enough replicates / ladder rungs for the requested statistic."""
