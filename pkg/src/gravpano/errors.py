"""Exception hierarchy shared by every gravpano module."""


class GravpanoError(Exception):
    """Base class for all library errors."""


class InvalidInputError(GravpanoError, ValueError):
    pass


class SingularConfigurationError(GravpanoError):
    """Input sits on a parameterization singularity (e.g. 180 degree alignment)."""


class OutOfRangeError(GravpanoError, ValueError):
    """A point cannot be mapped through the distortion model for the given lambda."""


class DegenerateError(GravpanoError):
    """The sample carries no information about (some of) the unknowns."""


class NotDivisibleError(GravpanoError, ArithmeticError):
    pass


class NoNullspaceError(GravpanoError, ArithmeticError):
    pass


class NoModelError(GravpanoError):
    """Robust estimation finished without an acceptable model.

    ``diagnostics`` carries whatever the estimator knew about its best attempt.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleConfigError(GravpanoError, ValueError):
    pass


class ParseError(GravpanoError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
