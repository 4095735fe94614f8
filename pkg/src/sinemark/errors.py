"""Exception types shared across the toolkit."""


class WatermarkError(Exception):
    """Base class for toolkit-specific errors."""


class DimensionError(WatermarkError, ValueError):
    """A size or shape constraint was violated."""


class VocabularyError(WatermarkError, ValueError):
    """A token id lies outside the key's vocabulary."""


class KeyFormatError(WatermarkError, ValueError):
    """A key file is malformed; the message names the first offending field."""


class ProbabilityError(WatermarkError, ValueError):
    """An input probability vector is too far from a valid distribution."""


class WindowError(WatermarkError, ValueError):
    """The scoring window does not fit inside the evaluated frequency grid."""


class TooFewProbesError(WatermarkError, ValueError):
    """Not enough probe records survive selection to form a usable series."""

    def __init__(self, message, n_survivors=0, floor=0):
        super().__init__(message)
        self.n_survivors = n_survivors
        self.floor = floor


class DivergenceError(WatermarkError, RuntimeError):
    """Student training diverged (loss rose several epochs in a row)."""


class BoundViolationError(WatermarkError, AssertionError):
    """An accuracy bound check failed; the message carries all estimates."""
