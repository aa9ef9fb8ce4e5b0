"""Exception hierarchy.

``DataError`` subclasses map to CLI exit code 2, ``NumericError`` subclasses
to exit code 3.
"""


class FfomamlError(Exception):
    pass


class DataError(FfomamlError, ValueError):
    pass


class NumericError(FfomamlError, ArithmeticError):
    pass


class ConfigError(DataError):
    pass


class InsufficientSamples(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class MissingEmbedding(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class SchemaMismatch(DataError):
    def __init__(self, table, missing):
        self.table = table
        self.missing = list(missing)
        super().__init__(f"{table}: missing column(s) {', '.join(self.missing)}")


class ParseError(DataError):
    def __init__(self, table, row, column, reason):
        self.table = table
        self.row = row
        self.column = column
        self.reason = reason
        super().__init__(f"{table}: row {row}, column {column}: {reason}")


class EmptyTable(DataError):
    pass


class NonFiniteLoss(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass
