"""Error handling utilities shared by the numerical core and the services."""
import logging
import time
from functools import wraps
from typing import Optional

logger = logging.getLogger(__name__)


class PartequivError(Exception):
    """Base exception for all partequiv errors."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        self.message = message
        self.original_error = original_error
        super().__init__(self.message)


class GroupError(PartequivError):
    """Exception for invalid group operations (charts, enumerations)."""
    pass


class ShapeError(PartequivError):
    """Exception for incompatible tensor shapes."""
    pass


class DistributionError(PartequivError):
    """Exception for invalid sampling-distribution usage."""
    pass


class KernelError(PartequivError):
    """Exception for invalid kernel network usage."""
    pass


class ConfigError(PartequivError):
    """Exception for invalid configuration values."""
    pass


class DatasetError(PartequivError):
    """Exception for dataset ingestion or construction errors."""
    pass


class CheckpointError(PartequivError):
    """Exception for unreadable or incompatible checkpoints."""
    pass


class TrainingError(PartequivError):
    """Exception raised when a training run has to be aborted."""
    pass


class AnalysisError(PartequivError):
    """Exception for invalid equivariance-analysis requests."""
    pass


def log_error_with_context(error: Exception, context: dict, operation: str):
    """
    Log an error with additional context information.

    Args:
        error: The exception that occurred
        context: Dictionary with context information
        operation: Name of the operation that failed
    """
    logger.error(f"Error in {operation}: {str(error)}")
    logger.error(f"Error type: {type(error).__name__}")
    if context:
        logger.error(f"Context: {context}")
    logger.debug("Stack trace:", exc_info=True)


def monitor_performance(operation_name: str, threshold_ms: int = 1000):
    """
    Decorator to monitor the duration of long-running operations.

    Args:
        operation_name: Name of the operation
        threshold_ms: Duration above which a warning is logged

    Returns:
        Decorator function
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                duration_ms = (time.perf_counter() - start_time) * 1000

                if duration_ms > threshold_ms:
                    logger.warning(f"Performance warning: {operation_name} took {duration_ms:.2f}ms (threshold: {threshold_ms}ms)")
                else:
                    logger.debug(f"Performance: {operation_name} took {duration_ms:.2f}ms")

        return wrapper
    return decorator
