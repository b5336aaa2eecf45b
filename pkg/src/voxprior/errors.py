"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary bad arguments (wrong shapes,
out-of-range options).  The classes below carry semantics that callers
may want to catch separately.
"""

from __future__ import annotations

__all__ = [
    "DegenerateInputError",
    "FormatError",
    "NumericError",
    "TrainingDivergedError",
]


class DegenerateInputError(ValueError):
    """Input is structurally valid but carries no usable information
    (e.g. a constant volume passed to a min-max normalizer)."""


class FormatError(ValueError):
    """A file does not conform to the expected on-disk format.

    The message names the offending field or byte range.
    """


class NumericError(RuntimeError):
    """A computation left the finite floating-point range (NaN/Inf)."""


class TrainingDivergedError(NumericError):
    """Training loss exceeded the divergence threshold.

    Attributes:
        step: 0-based optimizer step at which divergence was detected.
        loss: the offending loss value.
    """

    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss={loss:.3e}")
        self.step = step
        self.loss = loss
