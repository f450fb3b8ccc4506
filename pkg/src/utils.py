"""
Utility module providing common functionality for the calibration toolkit.

This module centralizes logging configuration, defines the exception hierarchy
shared by every stage, and provides error handling and file writing helpers.
"""
import os
import logging
import tempfile
from pathlib import Path
from typing import Optional, Any, Callable, Sequence, Union

from src.config import DEFAULT_LOG_FILE, LOG_FORMAT, STAGE_LOG_FORMAT


# Custom exception classes
class CalibrationToolError(Exception):
    """Base exception class for all application-specific errors."""
    exit_code: int = 3


class DomainError(CalibrationToolError):
    """Exception raised for invalid shapes, boxes or argument values."""
    exit_code = 2


class NumericalError(CalibrationToolError):
    """Exception raised when a covariance factorization fails."""

    def __init__(self, message: str, jitter_levels: Sequence[float] = ()):
        super().__init__(message)
        self.jitter_levels = list(jitter_levels)


class FitError(CalibrationToolError):
    """Exception raised when no optimization start yields a finite likelihood."""
    pass


class EstimationError(CalibrationToolError):
    """Exception raised when the calibration parameter cannot be estimated."""

    def __init__(self, message: str, output_index: Optional[int] = None,
                 fold: Optional[int] = None):
        super().__init__(message)
        self.output_index = output_index
        self.fold = fold


class AnalysisError(CalibrationToolError):
    """Exception raised for errors during decision analysis."""
    pass


class ExcessiveSkipsError(AnalysisError):
    """Exception raised when too many decision-analysis iterations were skipped."""
    exit_code = 4

    def __init__(self, message: str, skipped: int, total: int):
        super().__init__(message)
        self.skipped = skipped
        self.total = total


class ConfigurationError(CalibrationToolError):
    """Exception raised for errors in the run configuration."""
    exit_code = 2


class SchemaError(CalibrationToolError):
    """Exception raised when a dataset lacks a required column."""
    exit_code = 2

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class DatasetParseError(CalibrationToolError):
    """Exception raised when a dataset cell is not a finite number."""
    exit_code = 2

    def __init__(self, message: str, row: Optional[int] = None,
                 column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class StorageError(CalibrationToolError):
    """Exception raised for errors while writing reports or datasets."""
    pass


# Centralized logging configuration
def setup_logging(log_level: int = logging.INFO,
                  log_file: Union[str, Path] = DEFAULT_LOG_FILE) -> logging.Logger:
    """
    Route every record of a command run to the console and the application log.

    Args:
        log_level: The logging level to use (default: logging.INFO)
        log_file: Path to the log file (default: DEFAULT_LOG_FILE)

    Returns:
        The configured root logger
    """
    # A second command in the same process must not duplicate output
    logger = logging.getLogger()
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    logger.setLevel(log_level)
    formatter = logging.Formatter(LOG_FORMAT)

    # Console
    ch = logging.StreamHandler()
    ch.setLevel(log_level)
    ch.setFormatter(formatter)
    logger.addHandler(ch)

    # Application log
    os.makedirs(os.path.dirname(str(log_file)), exist_ok=True)
    fh = logging.FileHandler(log_file, encoding="utf-8", mode="a")
    fh.setLevel(log_level)
    fh.setFormatter(formatter)
    logger.addHandler(fh)

    return logger


def get_module_logger(name: str, log_file: Optional[Union[str, Path]] = None) -> logging.Logger:
    """
    Get a logger for a specific module with optional file output.

    Records still propagate to the root handlers; the extra file handler only
    collects the stage's own records in a dedicated file.

    Args:
        name: The name of the logger (typically the module's __name__)
        log_file: Optional path to a module-specific log file

    Returns:
        A configured logger instance
    """
    logger = logging.getLogger(name)

    if log_file is None:
        return logger

    log_path = str(log_file)
    has_file_handler = any(isinstance(h, logging.FileHandler) and
                           h.baseFilename == os.path.abspath(log_path)
                           for h in logger.handlers)
    if not has_file_handler:
        os.makedirs(os.path.dirname(log_path), exist_ok=True)
        fh = logging.FileHandler(log_path, encoding="utf-8", mode="a")
        fh.setFormatter(logging.Formatter(STAGE_LOG_FORMAT))
        logger.addHandler(fh)

    return logger


def safe_execute(func: Callable, error_msg: str,
                 logger: Optional[logging.Logger] = None,
                 exception_type: type = CalibrationToolError,
                 **kwargs: Any) -> Any:
    """
    Run one step of a command, converting foreign failures into package errors.

    Errors that already belong to the package hierarchy pass through unchanged
    so their exit codes and attached context survive; anything else is logged
    and wrapped in ``exception_type``.

    Args:
        func: The function to execute
        error_msg: Error message to log if the function fails
        logger: Logger to use (defaults to root logger)
        exception_type: Type of exception to raise if the function fails
        **kwargs: Arguments to pass to the function

    Returns:
        The result of the function call

    Raises:
        The specified exception_type with the error_msg
    """
    if logger is None:
        logger = logging.getLogger()

    try:
        return func(**kwargs)
    except CalibrationToolError as e:
        logger.error(f"{error_msg}: {str(e)}")
        raise
    except Exception as e:
        message = f"{error_msg} ({type(e).__name__} in {getattr(func, '__name__', func)}): {e}"
        logger.error(message, exc_info=True)
        raise exception_type(message) from e


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """
    Write text to ``path`` through a temporary file and a rename.

    Args:
        path: Destination file
        text: Content to write (UTF-8)

    Returns:
        The destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp_name, path)
    except Exception as e:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise StorageError(f"Error writing {path}: {e}") from e
    return path


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit status."""
    if isinstance(error, CalibrationToolError):
        return error.exit_code
    return 1

