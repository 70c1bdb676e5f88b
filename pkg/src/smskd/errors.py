"""Exception hierarchy shared by every subsystem.

The CLI maps these onto process exit codes, so each class carries the code
it should produce when it escapes a command.
"""


class SMSKDError(Exception):
    exit_code = 1


class ParameterError(SMSKDError, ValueError):
    """An argument is outside its valid range (e.g. a non-positive temperature)."""

    exit_code = 2


class ShapeError(SMSKDError, ValueError):
    exit_code = 2


class ContractError(SMSKDError, ValueError):
    """A precondition of an operation does not hold."""

    exit_code = 2


class ConfigError(SMSKDError, ValueError):
    exit_code = 2


class FormatError(SMSKDError, ValueError):
    """A data or checkpoint file does not match its binary layout."""

    exit_code = 3


class IntegrityError(FormatError):
    exit_code = 3


class NumericError(SMSKDError, ArithmeticError):
    """NaN/Inf appeared during a forward pass, or training diverged."""

    exit_code = 4
