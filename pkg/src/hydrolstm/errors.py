"""Exception types shared across the package.

The CLI maps these onto its exit codes: DataError -> 2, DivergenceError -> 3.
Plain ValueError from misuse of library functions is treated like DataError.
"""


class DataError(ValueError):
    """Malformed, inconsistent, or missing input data."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message, epoch=None, chunk_id=None):
        super().__init__(message)
        self.epoch = epoch
        self.chunk_id = chunk_id
