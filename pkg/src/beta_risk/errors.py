"""
Exception hierarchy for beta-risk.

Library code raises these; the CLI maps each class to a stable exit code
(0 success, 2 usage/config, 3 I/O, 4 numeric failure).
"""

from pathlib import Path
from typing import Optional, Union


class BetaRiskError(Exception):
    """Base class for all package errors."""

    exit_code: int = 1


class DomainError(BetaRiskError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""

    exit_code = 2


class UndefinedMetricError(DomainError):
    """A metric is undefined for the given records (e.g. AUC on one class)."""


class ConfigError(BetaRiskError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class StructuralError(BetaRiskError):
    """Shapes, identifiers or file contents do not line up."""

    exit_code = 2


class DataIOError(BetaRiskError):
    """A file could not be read or written."""

    exit_code = 3

    def __init__(self, path: Union[str, Path], reason: str):
        self.path = Path(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class NumericError(BetaRiskError):
    """A numerical procedure failed to converge or produced non-finite values."""

    exit_code = 4


class TrainingError(NumericError):
    """Training hit a non-finite gradient or loss."""

    def __init__(
        self,
        message: str,
        group: Optional[str] = None,
        sample_index: Optional[int] = None,
    ):
        self.group = group
        self.sample_index = sample_index
        details = []
        if group is not None:
            details.append(f"parameter group '{group}'")
        if sample_index is not None:
            details.append(f"sample {sample_index}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")
