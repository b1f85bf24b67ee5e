"""Exception hierarchy shared by every StockODE subsystem."""


class StockODEError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StockODEError, ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigError(StockODEError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(StockODEError, ValueError):
    """Malformed or inconsistent market / relation data."""


class NumericError(StockODEError, ArithmeticError):
    """A computation produced non-finite values."""


class DeterminismError(StockODEError, RuntimeError):
    """A function expected to be deterministic returned differing values."""
