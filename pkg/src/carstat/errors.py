"""Exception hierarchy shared by every carstat module."""


class CarstatError(Exception):
    """Base class for all carstat errors."""


# data model
class EmptyInputError(CarstatError, ValueError):
    pass


class InvalidArmError(CarstatError, ValueError):
    pass


class NonFiniteOutcomeError(CarstatError, ValueError):
    pass


class InvalidPiError(CarstatError, ValueError):
    pass


class Assumption5ViolatedError(CarstatError, ValueError):
    """A stratum contains units with different covariate levels."""


class NoTestableCellError(CarstatError, ValueError):
    pass


class LengthMismatchError(CarstatError, ValueError):
    pass


# randomization
class UnknownStratumError(CarstatError, KeyError):
    pass


class MissingMarginsError(CarstatError, ValueError):
    pass


class InvalidDesignError(CarstatError, ValueError):
    pass


# estimation / testing
class MissingCellError(CarstatError, ValueError):
    pass


class UnknownQError(CarstatError, ValueError):
    """The design does not pin down q(s), so modified tests are unavailable."""


class DegenerateVarianceError(CarstatError, ArithmeticError):
    pass


class SingularMatrixError(CarstatError, ArithmeticError):
    pass


class NotBinaryError(CarstatError, ValueError):
    pass


class OutOfRangeError(CarstatError, ValueError):
    pass


# dgp / montecarlo
class InvalidParamsError(CarstatError, ValueError):
    pass


class ConfigInvalidError(CarstatError, ValueError):
    pass


class UndeclaredLabelError(CarstatError, ValueError):
    """A row references a stratum or level outside the declared set."""
