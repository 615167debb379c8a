"""Exception hierarchy shared across the package.

Each class that may abort a CLI run carries the process exit code the
command-line front end maps it to.
"""


class VisnirError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ShapeError(VisnirError, ValueError):
    """A tensor does not have the shape a contract requires."""


class RangeError(VisnirError, ValueError):
    """A value lies outside its documented domain."""


class NumericError(VisnirError, ArithmeticError):
    """Non-finite values or otherwise unusable numerics."""


class DegenerateEmbeddingError(NumericError):
    """A face embedding collapsed to the zero vector before normalization."""


class ConfigError(VisnirError):
    exit_code = 2


class DataError(VisnirError):
    exit_code = 3


class SplitProtocolError(DataError):
    """A dataset split cannot satisfy the requested protocol."""


class PairingError(DataError):
    """An operation that needs index-aligned VIS/NIR partners got an unpaired batch."""


class DecodeError(DataError):
    """An image file could not be decoded; the message names the file."""


class DivergenceError(VisnirError):
    """Training produced a non-finite loss; carries the offending term name."""

    exit_code = 4

    def __init__(self, term: str, step: int | None = None):
        self.term = term
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in loss term '{term}'{where}")


class EvalProtocolError(VisnirError):
    """The verification protocol is violated (identity leakage, missing subjects, ...)."""

    exit_code = 5
