"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class SingularSystemError(ArithmeticError):
    """The least-squares design is rank deficient and no ridge was given."""


class IntegrabilityError(ArithmeticError):
    """A required moment looks infinite (sample or quadrature instability)."""


class QuadratureToleranceError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class TableRangeError(ValueError):
    """A query fell outside a tabulated range, even after extension."""


class PhiOverflowError(OverflowError):
    """Exponential bound overflowed double precision."""


class DivergingInfimumError(ArithmeticError):
    """An infimal convolution search box could not contain the minimiser."""


class StepFailureError(ArithmeticError):
    """An implicit backward step could not be solved."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class SolverInconsistencyError(AssertionError):
    """A property the exact solution must satisfy failed beyond tolerance."""


class HypothesisError(ValueError):
    """Input data fail a named integrability or growth hypothesis."""

    def __init__(self, hypothesis, message):
        super().__init__(f"{hypothesis}: {message}")
        self.hypothesis = hypothesis


class UnknownLabelError(KeyError):
    """A catalog lookup used an unknown name."""


class ConfigError(ValueError):
    """A run configuration could not be parsed or resolved."""


class ReportError(FileNotFoundError):
    """An artifact directory is missing files the report needs."""
