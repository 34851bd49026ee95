"""Exception types raised across the package."""

from __future__ import annotations


class CofactorError(Exception):
    """Base class for all package errors."""


class ParseError(CofactorError):
    """A malformed record in an input stream."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class ValidationError(CofactorError):
    """Well-formed input that violates a dataset invariant."""


class SplitError(CofactorError):
    """A train/validation/test split that cannot satisfy its mode's constraints."""


class TrainingDivergedError(CofactorError):
    """The joint loss became non-finite during training."""

    def __init__(self, epoch: int, term: str):
        self.epoch = epoch
        self.term = term
        super().__init__(f"non-finite loss at epoch {epoch} (term: {term})")


class CheckpointError(CofactorError):
    """A checkpoint file that is unreadable or inconsistent with the data."""
