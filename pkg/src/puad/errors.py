"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: contract/config/shape problems exit 2,
file problems exit 3 and numeric failures exit 4.
"""


class PuadError(Exception):
    exit_code = 1


class ContractError(PuadError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 2


class ShapeError(ContractError):
    pass


class DomainError(ContractError):
    """Input outside the mathematical domain of an operation (log of 0, empty reduce)."""


class ConfigError(ContractError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class CapacityError(ContractError):
    """A data pool is too small for the requested sample counts."""

    def __init__(self, message, pool=None):
        super().__init__(message)
        self.pool = pool


class FormatError(PuadError, ValueError):
    """Malformed file contents. ``location`` is a byte offset or line number."""

    exit_code = 3

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class NumericError(PuadError, ArithmeticError):
    exit_code = 4
