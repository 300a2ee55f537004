"""Exception hierarchy shared by every fusionbench module."""


class FusionBenchError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FusionBenchError, ValueError):
    def __init__(self, where: str, expected, got):
        self.where = where
        self.expected = expected
        self.got = got
        super().__init__(f"{where}: expected shape {expected}, got {got}")


class NumericError(FusionBenchError, FloatingPointError):
    """A NaN (or other non-finite value) reached a place that refuses it."""


class GraphError(FusionBenchError, RuntimeError):
    """Misuse of the recorded computation graph."""


class DataError(FusionBenchError):
    """Unreadable, missing or inconsistent dataset content."""


class ConfigError(FusionBenchError, ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = ""
        if field:
            where += f"field '{field}'"
        if line is not None:
            where += f" (line {line})" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
