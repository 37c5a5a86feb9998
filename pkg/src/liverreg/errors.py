"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for parse/validation
failures, 3 for numerical failures, 4 for I/O failures.
"""


class RegistrationError(Exception):
    exit_code = 1


class ValidationError(RegistrationError, ValueError):
    exit_code = 2


class NumericalError(RegistrationError, ArithmeticError):
    exit_code = 3


class IoFailure(RegistrationError, OSError):
    exit_code = 4


class _IndexedError:
    """Mixin for errors that point at one offending element."""

    def __init__(self, index, detail=""):
        self.index = index
        msg = f"index {index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NonPositiveDepth(_IndexedError, NumericalError):
    pass


class NonPositiveUncertainty(_IndexedError, ValidationError):
    pass


class ZeroNormVector(_IndexedError, ValidationError):
    pass


class EmptySet(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyMatches(ValidationError):
    pass


class EmptyCorrespondences(ValidationError):
    pass


class NoUnmatchedPixels(NumericalError):
    pass


class InvalidCount(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class InvalidParams(ValidationError):
    pass


class DegenerateCurve(ValidationError):
    pass


class OrientationUndetermined(ValidationError):
    pass


class TooFewCorrespondences(ValidationError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class NoConsensus(NumericalError):
    pass


class InvariantViolation(ValidationError):
    def __init__(self, type_name, detail):
        self.type_name = type_name
        self.detail = detail
        super().__init__(f"{type_name}: {detail}")


class ParseError(ValidationError):
    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")
