"""Exception hierarchy shared by every module."""


class KTupletError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(KTupletError, ValueError):
    pass


class DegenerateVectorError(KTupletError, ValueError):
    """A vector too close to zero to be normalized."""


class ParseError(KTupletError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(KTupletError, ValueError):
    pass


class SamplingError(KTupletError, ValueError):
    pass


class SplitError(KTupletError, ValueError):
    pass


class OptimizerError(KTupletError, FloatingPointError):
    pass
