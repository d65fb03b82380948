"""Error taxonomy shared by all modules.

The CLI maps these onto exit codes: validation errors exit 1, I/O errors
exit 2, numeric errors exit 3.
"""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition or invariant."""


class DegenerateGeometryError(InvalidArgumentError):
    """Point configuration too degenerate for the requested operation
    (coincident or collinear correspondence sets, rank-deficient covariance)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or diverged."""


class DataIOError(OSError):
    """A data file is missing, truncated, or malformed."""


class ManifestValidationError(InvalidArgumentError):
    """A dataset manifest violates its invariants.

    Carries the full list of violations so callers can report them all at
    once instead of one per run.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "manifest validation failed:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )
