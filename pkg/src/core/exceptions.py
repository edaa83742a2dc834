"""
Custom exceptions for augcl.
Provides clear categorization of errors so the CLI can map them to exit codes.
"""
from pathlib import Path
from typing import Any, List, Optional, Union


class BaseAugclError(Exception):
    """Base exception for all augcl errors."""
    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message)
        self.details = details or {}


class ConfigurationError(BaseAugclError):
    """Raised when an experiment configuration is invalid."""
    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message, {"errors": list(errors or [])})
        self.errors = list(errors or [])


class ContractError(BaseAugclError):
    """Raised when an operation is called outside its preconditions."""
    pass


class DimensionError(ContractError):
    """Raised when tensor shapes do not agree."""
    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        super().__init__(message, {"expected": expected, "actual": actual})
        self.expected = expected
        self.actual = actual


class BatchSizeError(ContractError):
    """Raised when a batch statistic needs more rows than it was given."""
    def __init__(self, message: str, batch_size: int, minimum: int = 2):
        super().__init__(message, {"batch_size": batch_size, "minimum": minimum})
        self.batch_size = batch_size
        self.minimum = minimum


class NumericalError(BaseAugclError):
    """Raised when an operation produces NaN or Inf."""
    pass


class DataError(BaseAugclError):
    """Base class for dataset ingestion errors."""
    pass


class DataFormatError(DataError):
    """Raised when a dataset file has the wrong magic number or record layout."""
    pass


class DataLengthError(DataError):
    """Raised when a dataset file is truncated."""
    def __init__(self, message: str, expected: int, actual: int):
        super().__init__(message, {"expected": expected, "actual": actual})
        self.expected = expected
        self.actual = actual


class DataMissingError(DataError):
    """Raised when dataset files cannot be found."""
    pass


class CheckpointError(BaseAugclError):
    """Raised when a checkpoint cannot be written or read back."""
    pass


class TrainingError(BaseAugclError):
    """Raised when a task fails; completed task results are preserved."""
    def __init__(self, message: str, completed: Optional[list] = None, task_index: Optional[int] = None):
        super().__init__(message, {"task_index": task_index})
        self.completed = list(completed or [])
        self.task_index = task_index


class LogCorruptionError(BaseAugclError):
    """Raised when a persisted run log cannot be parsed."""
    def __init__(self, message: str, path: Union[str, Path]):
        super().__init__(message, {"path": str(path)})
        self.path = Path(path)
