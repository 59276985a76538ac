"""
Error Handling Utilities for tiltlab

Exception hierarchy shared by every module, logger setup, and the error
bookkeeping used by long-running experiments.
"""

import functools
import logging
from typing import Callable, Dict, Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DETAILED_LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class TiltLabError(Exception):
    """Base exception for tiltlab operations"""
    exit_code = EXIT_RUNTIME


class ArgumentError(TiltLabError, ValueError):
    """Exception raised when an argument violates an operation's precondition"""
    exit_code = EXIT_USAGE


class DatasetFormatError(TiltLabError):
    """Exception raised when a dataset file does not follow its binary format"""
    exit_code = EXIT_USAGE


class DatasetConsistencyError(TiltLabError):
    """Exception raised when image and label files disagree"""
    exit_code = EXIT_USAGE


class DatasetIOError(TiltLabError, OSError):
    """Exception raised when a file is missing, truncated or unwritable"""
    exit_code = EXIT_USAGE


class EmptyInputError(ArgumentError):
    """Exception raised when an operation receives no data"""


class UnsupportedArchitectureError(TiltLabError):
    """Exception raised when a model cannot undergo the requested surgery"""
    exit_code = EXIT_USAGE


class NumericError(TiltLabError):
    """Exception raised when a computation produces non-finite values"""


class DegenerateDataError(TiltLabError):
    """Exception raised when data carries no variance to work with"""


class DegenerateFeaturesError(DegenerateDataError):
    """Exception raised when the feature space has zero leading variance"""


class DegenerateScaleError(DegenerateDataError):
    """Exception raised when a tilting scale factor is zero"""


class DegenerateSeedError(DegenerateDataError):
    """Exception raised when a backdoor seed has no low-variance content"""


class TrainingError(TiltLabError):
    """Exception raised when training diverges"""


class CalibrationError(TiltLabError):
    """Exception raised when the target confidence cannot be bracketed"""


class MaskedGradientError(TiltLabError):
    """Exception raised when the input gradient vanishes before success"""


def _console_handler(root: logging.Logger) -> Optional[logging.Handler]:
    for handler in root.handlers:
        if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
            return handler
    return None


def setup_logger(name: str) -> logging.Logger:
    """
    Return a named logger under the 'tiltlab' namespace

    The console handler lives on the 'tiltlab' logger and is installed once;
    module loggers propagate to it.

    Args:
        name: Logger name, usually 'tiltlab.<module>'

    Returns:
        logging.Logger: Configured logger
    """
    root = logging.getLogger('tiltlab')
    if root.level == logging.NOTSET:
        root.setLevel(logging.INFO)

    if _console_handler(root) is None:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)

    return logging.getLogger(name)


def attach_run_log(log_file: str, verbose: bool = False) -> logging.Handler:
    """
    Attach a file handler to the 'tiltlab' logger for one CLI run

    Args:
        log_file: Path of the run log
        verbose: Whether DEBUG records reach the console

    Returns:
        logging.Handler: The handler, so the caller can detach it
    """
    setup_logger('tiltlab')
    root = logging.getLogger('tiltlab')
    root.setLevel(logging.DEBUG)
    _console_handler(root).setLevel(logging.DEBUG if verbose else logging.WARNING)

    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(DETAILED_LOG_FORMAT))
    root.addHandler(file_handler)

    return file_handler


class ErrorHandler:
    """Error bookkeeping with graceful degradation for non-critical steps"""

    def __init__(self, logger_name='tiltlab.errors'):
        self.logger = setup_logger(logger_name)
        self.error_counts = {}

    def graceful_degradation(self, operation_name: str, critical: bool = False):
        """
        Decorator for graceful degradation of non-critical operations

        Args:
            operation_name: Name of the operation for logging
            critical: Whether failure should stop the entire process
        """
        def decorator(func):
            @functools.wraps(func)
            def wrapper(*args, **kwargs):
                try:
                    result = func(*args, **kwargs)
                    self.logger.debug(f"Completed {operation_name}")
                    return result
                except Exception as e:
                    self.logger.warning(f"Failed {operation_name}: {str(e)}")
                    self.record_error(operation_name, e)

                    if critical:
                        raise
                    self.logger.info(f"Continuing without {operation_name} (non-critical)")
                    return None

            return wrapper
        return decorator

    def capture(self, operation: str, func: Callable, *args, catch=TiltLabError, **kwargs):
        """
        Run func and return (result, None), or (None, error) for a caught error

        Args:
            operation: Name recorded in the error summary
            func: Function to execute
            catch: Exception type(s) turned into a recorded error; others propagate
        """
        try:
            return func(*args, **kwargs), None
        except catch as e:
            self.logger.debug(f"{operation} failed: {e}")
            self.record_error(operation, e)
            return None, e

    def record_error(self, operation: str, error: Exception):
        """Record error statistics"""
        key = f"{operation}:{type(error).__name__}"
        self.error_counts[key] = self.error_counts.get(key, 0) + 1

    def get_error_summary(self) -> Dict[str, int]:
        """Get summary of all recorded errors"""
        return self.error_counts.copy()

    def reset_error_counts(self):
        """Reset error counters"""
        self.error_counts.clear()


# Global error handler instance
error_handler = ErrorHandler()


def handle_gracefully(operation_name: str, critical: bool = False):
    """Simplified graceful degradation decorator"""
    return error_handler.graceful_degradation(operation_name, critical)


def exit_code_for(error: Optional[BaseException]) -> int:
    """Map an exception to the CLI exit code"""
    if error is None:
        return EXIT_OK
    if isinstance(error, TiltLabError):
        return error.exit_code
    if isinstance(error, (FileNotFoundError, PermissionError)):
        return EXIT_USAGE
    return EXIT_RUNTIME
