"""
Utility functions for the recurrent GP toolkit.
Contains the exception hierarchy, stable Cholesky helpers, error reports and
small timing/file helpers shared across modules.
"""

import logging
import re
import time
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from config import Config

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class RGPError(Exception):
    """Base class of every error raised by this package."""


class StructuralError(RGPError, ValueError):
    """Shapes, lengths or indices that do not fit together."""


class NumericalError(RGPError, np.linalg.LinAlgError):
    """A factorization that failed even after jitter escalation."""

    def __init__(self, message: str, jitter: Optional[float] = None, context: str = ""):
        super().__init__(message)
        self.jitter = jitter
        self.context = context


class TrainingError(RGPError):
    """Every optimization restart failed."""

    def __init__(self, message: str, diagnostics: Optional[list] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class DataError(RGPError, ValueError):
    """Unreadable or degenerate data."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


class GenerationError(RGPError):
    """A synthetic trajectory diverged."""


def jitter_cholesky(K: np.ndarray, scale: float, start: float = Config.JITTER_START,
                    context: str = "") -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of K + jitter * scale * I with escalating jitter.

    The relative jitter starts at ``start`` and grows by ``Config.JITTER_GROWTH``
    up to ``Config.JITTER_MAX``. A zero ``start`` first tries the bare matrix.

    Args:
        K (np.ndarray): Symmetric matrix
        scale (float): Scale of the jitter, usually the kernel signal variance
        start (float): First relative jitter tried
        context (str): Name of the matrix for error messages

    Returns:
        Tuple[np.ndarray, float]: Lower factor and the relative jitter applied
    """
    eye = np.eye(K.shape[0])
    rel = start
    while True:
        try:
            return linalg.cholesky(K + rel * scale * eye, lower=True), rel
        except linalg.LinAlgError:
            pass
        next_rel = Config.JITTER_START if rel == 0.0 else rel * Config.JITTER_GROWTH
        if next_rel > Config.JITTER_MAX * (1.0 + 1e-12):
            raise NumericalError(
                f"Cholesky failed for {context or 'matrix'} with relative jitter {rel:.1e}",
                jitter=rel * scale, context=context)
        logger.warning("Cholesky of %s failed, raising relative jitter to %.1e",
                       context or "matrix", next_rel)
        rel = next_rel


def cholesky(K: np.ndarray, context: str = "") -> np.ndarray:
    """Plain lower Cholesky factor, mapping failures to NumericalError."""
    try:
        return linalg.cholesky(K, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky failed for {context or 'matrix'}: {exc}",
                             jitter=0.0, context=context) from exc


def chol_inverse(L: np.ndarray) -> np.ndarray:
    """Inverse of L Lᵀ from its lower factor."""
    return linalg.cho_solve((L, True), np.eye(L.shape[0]))


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def sanitize_filename(filename: str) -> str:
    """
    Sanitize a filename by removing invalid characters.

    Args:
        filename (str): Original filename, e.g. a dataset or model name

    Returns:
        str: Sanitized filename
    """
    sanitized = re.sub(r'[<>:"/\\|?*+\s]', '_', filename)
    sanitized = re.sub(r'_+', '_', sanitized)
    return sanitized.strip('_')


def format_elapsed_time(start_time: float, end_time: float) -> str:
    """
    Format elapsed time in human-readable format.

    Args:
        start_time (float): Start timestamp
        end_time (float): End timestamp

    Returns:
        str: Formatted time string
    """
    elapsed = end_time - start_time

    if elapsed < 1:
        return f"{elapsed*1000:.0f} ms"
    elif elapsed < 60:
        return f"{elapsed:.1f} seconds"
    else:
        minutes = int(elapsed // 60)
        seconds = elapsed % 60
        return f"{minutes}m {seconds:.1f}s"


def create_error_report(error: Exception, context: str = "") -> Dict[str, str]:
    """
    Create a structured error report.

    Args:
        error (Exception): The exception that occurred
        context (str): Additional context, e.g. the dataset/model cell

    Returns:
        Dict[str, str]: Error report
    """
    return {
        "error_type": type(error).__name__,
        "error_message": str(error),
        "context": context,
        "suggestion": get_error_suggestion(error),
    }


def get_error_suggestion(error: Exception) -> str:
    """
    Get a user-facing suggestion based on the error type.

    Args:
        error (Exception): The exception

    Returns:
        str: Suggested action
    """
    if isinstance(error, NumericalError):
        return "Rescale the data or reduce the number of inducing inputs."
    if isinstance(error, TrainingError):
        return "Increase the evaluation budget or the number of restarts."
    if isinstance(error, DataError):
        return "Check the CSV file: two numeric columns (u, y), no missing values."
    if isinstance(error, GenerationError):
        return "Lower the input amplitude or the noise level of the synthetic system."
    if isinstance(error, StructuralError):
        return "Check that the sequences are longer than the lags."
    return "Please try again or report the issue."


class PerformanceMonitor:
    """Wall-clock timing of named operations."""

    def __init__(self):
        self.timings: Dict[str, Dict[str, float]] = {}

    def start_timing(self, operation: str):
        """Start timing an operation."""
        self.timings[operation] = {"start": time.perf_counter()}

    def end_timing(self, operation: str):
        """End timing an operation."""
        if operation in self.timings:
            self.timings[operation]["end"] = time.perf_counter()
            self.timings[operation]["duration"] = (
                self.timings[operation]["end"] - self.timings[operation]["start"]
            )

    def get_timing(self, operation: str) -> Optional[float]:
        """Get timing for an operation."""
        if operation in self.timings and "duration" in self.timings[operation]:
            return self.timings[operation]["duration"]
        return None

    def get_all_timings(self) -> Dict[str, Any]:
        """Get all timing data."""
        return {
            op: data.get("duration", 0)
            for op, data in self.timings.items()
            if "duration" in data
        }
