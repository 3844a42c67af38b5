"""Error classes shared across the package.

The CLI maps these onto exit codes: FormatError (and other bad-input
conditions) -> 2, NumericError -> 3; contract violations raise plain
ValueError and indicate a caller bug rather than bad data.
"""


class FormatError(ValueError):
    """A file failed to parse: bad magic, version, truncation, malformed text."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values (diverged loss, NaN inputs)."""
