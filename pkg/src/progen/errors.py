"""Shared exception types."""

from __future__ import annotations


class ProgenError(Exception):
    """Base class for all package errors."""


class ConfigError(ProgenError):
    """Invalid or missing configuration."""


class DatasetError(ProgenError):
    """Malformed dataset file or dataset contract violation."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionMismatch(ProgenError, ValueError):
    """Vector or feature dimensions do not match the model."""


class ConvergenceError(ProgenError):
    """Iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class ScaleTooLargeError(ProgenError):
    """Stochastic inverse-HVP recursion diverged; reduce the scale."""


class BackendError(ProgenError):
    """Generation backend failed after exhausting retries."""


class EmptyCompletionError(BackendError):
    """Backend returned an empty completion; caller should resample."""


class ResampleCapError(BackendError):
    """A generation slot exceeded its resampling budget."""


class InsufficientExamplesError(ProgenError):
    """Not enough in-context examples of a required class."""


class CheckpointError(ProgenError):
    """Missing, corrupt, or mismatched run checkpoint."""
