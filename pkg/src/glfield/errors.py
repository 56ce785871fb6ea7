"""Exception hierarchy shared by every module."""


class GLFieldError(Exception):
    """Base class for all package errors."""


class SizeError(GLFieldError, ValueError):
    pass


class GeometryError(GLFieldError, ValueError):
    pass


class ConvexityError(GLFieldError, ValueError):
    pass


class ValidationError(GLFieldError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SolverError(GLFieldError, ArithmeticError):
    pass


class InputError(GLFieldError, ValueError):
    pass


class ParameterError(GLFieldError, ValueError):
    pass


class NumericalError(GLFieldError, ArithmeticError):
    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


class DegenerateTraceError(NumericalError):
    pass


class ConfigError(GLFieldError, ValueError):
    pass


class IntegrityError(GLFieldError):
    pass
