"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so new failure modes should
subclass one of the three roots rather than raising bare ValueErrors.
"""


class ValidationError(ValueError):
    """Bad inputs: malformed configs, invalid distributions, range violations."""


class DimensionError(ValidationError):
    """Shape or width mismatch between tensors that must agree."""


class NumericOverflowError(ArithmeticError):
    """A computation produced a non-finite value."""


class DataFormatError(ValueError):
    """On-disk artifact is malformed, truncated, or of an unsupported version."""
