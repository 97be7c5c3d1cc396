"""Exception types raised across the package."""


class CobrahError(Exception):
    """Base class for all package errors."""


class EmptyHistory(CobrahError, ValueError):
    pass


class InvalidMean(CobrahError, ValueError):
    pass


class InvalidProbability(CobrahError, ValueError):
    pass


class RadiusUndefined(CobrahError, ValueError):
    pass


class InvalidRadius(CobrahError, ValueError):
    pass


class InsufficientData(CobrahError, ValueError):
    pass


class CapacityExceedsArms(CobrahError, ValueError):
    pass


class ConfigError(CobrahError, ValueError):
    pass


class InvalidBound(CobrahError, ValueError):
    pass


class TooLarge(CobrahError, ValueError):
    pass


class GapDegenerate(CobrahError, ValueError):
    pass


class ParseError(CobrahError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrderError(CobrahError, ValueError):
    pass
