"""Exception hierarchy shared across the toolkit.

Two families matter to callers (and to the CLI's exit codes): ``DataError``
for malformed/inconsistent inputs and files, ``NumericError`` for numeric
failures. Plain I/O failures are left to the interpreter's ``OSError``.
"""

from __future__ import annotations

# File-system failures (missing paths, permissions, ...) surface as the
# stdlib's own OSError; the alias keeps the contract name visible.
IoFailure = OSError


class ToolkitError(Exception):
    """Base class for all toolkit-specific errors."""


class DataError(ToolkitError):
    """Malformed or inconsistent input data or files."""


class NumericError(ToolkitError):
    """Numeric failure (degenerate input, non-finite results, ...)."""


class BadMagic(DataError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(DataError):
    """File declares a format version this build cannot read."""


class TruncatedFile(DataError):
    """File is shorter than its header promises (or the header is malformed)."""


class NormViolation(DataError):
    """A stored vector is not unit-norm within tolerance."""

    def __init__(self, row: int, norm: float):
        super().__init__(f"row {row} has L2 norm {norm!r}, expected 1 within 1e-5")
        self.row = row
        self.norm = norm


class MetaMismatch(DataError):
    """Sidecar metadata disagrees with the embedding file."""


class DimMismatch(DataError):
    """Vector dimensionality differs between operands."""


class EmptyCandidateSet(DataError):
    """Every candidate row was excluded from a search."""


class EmptyDatabase(DataError):
    """Operation requires a non-empty embedding store."""


class SingletonDatabase(DataError):
    """The only candidate row is the excluded positive."""


class MalformedRecord(DataError):
    """A JSONL record does not match its schema."""


class ShapeMismatch(DataError):
    """Array shapes are inconsistent with the declared dimensions."""


class MissingAssignment(DataError):
    """A prompt has no mined reflective negative."""


class EmptyInput(DataError):
    """Operation requires at least one input record."""


class CheckpointMissing(DataError):
    """Retriever variant requires a head checkpoint that was not found."""


class IdLookupFailure(DataError):
    """A row index could not be translated to a stable id."""


class LengthMismatch(DataError):
    """Aligned lists have different lengths."""


class ZeroVector(NumericError):
    """Vector has zero norm and cannot be normalized."""


class NonFiniteLoss(NumericError):
    """Loss evaluated to NaN or infinity."""


class DivergenceDetected(NumericError):
    """Mean epoch loss is NaN or infinity."""


class SpecInfeasible(NumericError):
    """Synthetic benchmark screening failed within the retry budget."""
