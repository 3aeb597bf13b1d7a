"""
Custom exceptions for FKBench.

Every exception carries the process exit code the CLI reports for it.
"""

from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_SELF_CHECK = 4


class FKBenchError(Exception):
    """Base exception for all FKBench errors."""

    def __init__(self, message: str, exit_code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.message = message
        self.exit_code = exit_code


class ConfigurationError(FKBenchError):
    """
    Configuration error.

    Raised for unknown keys, malformed overrides, or hyperparameters
    outside their valid range.
    Exit code: 2
    """

    def __init__(self, message: str = "Configuration error"):
        super().__init__(message, exit_code=EXIT_CONFIG)


class SpecError(FKBenchError):
    """
    Invalid model specification or unknown preset name.

    Exit code: 2
    """

    def __init__(self, message: str = "Invalid model spec"):
        super().__init__(message, exit_code=EXIT_CONFIG)


class LayoutError(FKBenchError):
    """Parameter vectors or tensors do not share a layout."""

    def __init__(self, message: str = "Layout mismatch"):
        super().__init__(message)


class ShapeError(FKBenchError):
    """Input array dimensions do not match the model."""

    def __init__(self, message: str = "Shape mismatch"):
        super().__init__(message)


class CacheError(FKBenchError):
    """Backward pass was given a cache from a different forward pass."""

    def __init__(self, message: str = "Stale or mismatched forward cache"):
        super().__init__(message)


class NumericError(FKBenchError):
    """A function evaluation produced a non-finite value."""

    def __init__(self, message: str = "Non-finite value"):
        super().__init__(message)


class ClientError(FKBenchError):
    """
    Client-side training error.

    Raised when a client has no local data.
    """

    def __init__(self, message: str, client_id: Optional[int] = None):
        super().__init__(message)
        self.client_id = client_id


class DivergenceError(FKBenchError):
    """
    Local training diverged.

    Raised when a loss evaluation is not finite. Carries the ids needed
    to locate the failure inside a multi-seed run.
    """

    def __init__(
        self,
        message: str,
        round_index: Optional[int] = None,
        client_id: Optional[int] = None,
        seed: Optional[int] = None,
    ):
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id
        self.seed = seed


class RunFailedError(FKBenchError):
    """Every seed of a run diverged."""

    def __init__(self, message: str = "All seeds diverged"):
        super().__init__(message)


class PartitionError(FKBenchError):
    """The partitioner cannot satisfy the minimum-samples rule."""

    def __init__(self, message: str = "Partition failed"):
        super().__init__(message)


class GenerationError(FKBenchError):
    """Synthetic data generation gave up placing class means."""

    def __init__(self, message: str = "Dataset generation failed"):
        super().__init__(message)


class FormatError(FKBenchError):
    """
    Malformed FKB dataset file.

    `offset` is the byte offset at which decoding failed, when known.
    """

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ReportError(FKBenchError):
    """A report or CSV artifact failed schema or consistency validation."""

    def __init__(self, message: str = "Invalid report"):
        super().__init__(message)


class SelfCheckError(FKBenchError):
    """
    Gradient self-check failed.

    Exit code: 4
    """

    def __init__(self, message: str = "Gradient self-check failed"):
        super().__init__(message, exit_code=EXIT_SELF_CHECK)
