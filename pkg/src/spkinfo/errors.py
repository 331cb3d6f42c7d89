"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented process status without a lookup table.
"""


class SpkInfoError(Exception):
    exit_code = 1


class ConfigError(SpkInfoError):
    exit_code = 2


class DataError(SpkInfoError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class DimensionMismatchError(DataError):
    pass


class ValidationError(DataError):
    pass


class InsufficientDataError(DataError):
    def __init__(self, message, attainable=None):
        super().__init__(message)
        self.attainable = attainable


class EmptyInputError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class NumericalError(SpkInfoError):
    exit_code = 4
