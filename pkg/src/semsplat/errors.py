"""Exception hierarchy shared by every module.

Exit-code mapping used by the CLI lives in cli.py: usage errors exit 2,
DataError 3, NumericalError 4.
"""


class SemsplatError(Exception):
    """Base class for all package errors."""


class DataError(SemsplatError):
    """Malformed, inconsistent, or degenerate input data."""


class NumericalError(SemsplatError):
    """Well-formed input on which a numerical procedure failed."""


class InvariantError(SemsplatError):
    """An internal invariant that callers rely on was violated."""
