"""Exception hierarchy for fdlmi."""


class FdlmiError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FdlmiError, ValueError):
    """Malformed arguments: bad shapes, out-of-range frequencies, bad files."""


class IdentificationError(FdlmiError):
    """The input spectrum matrix is singular at some frequency."""

    def __init__(self, message, omega=None):
        super().__init__(message)
        self.omega = omega


class EvaluationError(FdlmiError):
    """A transfer description has a pole on (or numerically at) a grid point."""

    def __init__(self, message, omega=None):
        super().__init__(message)
        self.omega = omega


class AssemblyError(FdlmiError):
    """Constraint blocks could not be assembled into a real LMI system."""


class InitializationError(FdlmiError):
    """No admissible initial controller was found."""


class SynthesisError(FdlmiError):
    """The iterative synthesis failed; ``trace`` holds what was computed."""

    def __init__(self, message, status="infeasible", trace=None):
        super().__init__(message)
        self.status = status
        self.trace = trace


class WindingError(FdlmiError):
    """Winding number cannot be resolved from the sampled contour."""
