"""Exception hierarchy; each class maps to a CLI exit code."""


class CASDError(Exception):
    exit_code = 1


class UsageError(CASDError):
    exit_code = 2


class ConfigError(CASDError):
    exit_code = 2


class DimensionError(CASDError, ValueError):
    exit_code = 2


class DomainError(CASDError, ValueError):
    exit_code = 2


class DataError(CASDError):
    exit_code = 3


class IngestionError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NumericError(CASDError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericError):
    pass
