"""Exception hierarchy shared by the library and the CLI."""


class LoadmixError(Exception):
    """Base class for all library errors."""


class ParseError(LoadmixError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(LoadmixError):
    """Input data violates an invariant (missing reads, empty dataset, ...)."""


class ConfigError(LoadmixError):
    pass


class DimensionError(LoadmixError, ValueError):
    pass


class InfeasibleError(LoadmixError):
    """Problem cannot be fitted as posed, e.g. fewer rows than clusters."""


class NoJumpError(LoadmixError):
    pass


class NumericalError(LoadmixError):
    pass
