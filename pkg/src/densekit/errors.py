"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, DataError -> 2,
NumericError -> 3.
"""


class DataError(Exception):
    """Malformed, inconsistent, or missing input data."""


class NumericError(Exception):
    """Non-finite values or other numerical failure during computation."""
