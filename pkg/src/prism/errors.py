"""Exception hierarchy shared by every module."""


class PrismError(ValueError):
    """Base class for all validation errors raised by the package."""


class SingularLattice(PrismError):
    pass


class NotUnimodular(PrismError):
    pass


class NonFinite(PrismError):
    pass


class DimensionMismatch(PrismError):
    pass


class ShapeMismatch(PrismError):
    pass


class KindMismatch(PrismError):
    pass


class UnknownElement(PrismError):
    pass


class LengthMismatch(PrismError):
    pass


class EmptyInput(PrismError):
    pass


class LayerMismatch(PrismError):
    pass


class DivergenceDetected(PrismError):
    pass


class ConfigError(PrismError):
    pass


class ParseError(PrismError):
    """Malformed structure record; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidLattice(ParseError):
    pass


class InvalidFraction(ParseError):
    pass


class UsageError(PrismError):
    pass
