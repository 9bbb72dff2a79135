"""Exception hierarchy shared by all modules.

The CLI maps :class:`DataError` subclasses to exit code 2 and
:class:`DivergenceError` to exit code 3.
"""


class GanlmError(Exception):
    pass


class ContractError(GanlmError):
    """A caller broke an operation's precondition."""


class DataError(GanlmError):
    """Bad input data or configuration; reported to the user, exit code 2."""


class DimensionError(DataError, ValueError):
    pass


class NonFiniteError(GanlmError, FloatingPointError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class LabelError(ParseError):
    pass


class UniquenessError(ParseError):
    pass


class FormatError(DataError):
    pass


class CapacityError(DataError):
    def __init__(self, shortfall: dict[str, int]):
        self.shortfall = shortfall
        parts = ", ".join(f"{k} short by {v}" for k, v in shortfall.items())
        super().__init__(f"not enough records for the requested split: {parts}")


class ConfigError(DataError):
    pass


class DivergenceError(GanlmError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, breakdown=None, log=None):
        self.breakdown = breakdown
        self.log = log
        super().__init__(message)
