"""
Error handling utilities: domain exceptions, CLI error lines and throttled warnings.
"""

import json
import time
import logging
from typing import Optional

logger = logging.getLogger(__name__)

# ─── Exceptions ──────────────────────────────────────────────


class ArgusError(ValueError):
    """Base class for every domain failure raised by the pipeline."""


class TraceFormatError(ArgusError):
    """Malformed record in a canonical trace stream."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class UnknownDeviceError(ArgusError):
    def __init__(self, device_id: str, where: str = ""):
        self.device_id = device_id
        suffix = f" ({where})" if where else ""
        super().__init__(f"unknown device '{device_id}'{suffix}")


class StateTypeError(ArgusError):
    """State value does not match the device kind (label vs number)."""


class TraceSpanError(ArgusError):
    """Trace too short for the requested day split, or an attack window outside it."""


class OutOfOrderError(ArgusError):
    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"event {index}: {message}")


class ShapeMismatchError(ArgusError):
    pass


class TrainingError(ArgusError):
    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        prefix = f"epoch {epoch}: " if epoch is not None else ""
        super().__init__(f"{prefix}{message}")


class ModelFormatError(ArgusError):
    """Unreadable, truncated or wrong-version model container."""


class CompatibilityError(ArgusError):
    """Model and catalog disagree on dimensions or catalog hash."""


class ThresholdError(ArgusError):
    pass


class PreconditionError(ArgusError):
    """Attack scenario cannot be placed because a required context is absent."""

    def __init__(self, missing_context: str, message: str = ""):
        self.missing_context = missing_context
        super().__init__(message or f"missing context: {missing_context}")


class ProfileError(ArgusError):
    pass


class EvaluationError(ArgusError):
    pass


# ─── CLI error line ──────────────────────────────────────────


def error_line(exc: BaseException) -> str:
    """
    Render an exception as one machine-parseable line:
        error kind=TraceFormatError message="line 3: ..."
    """
    message = json.dumps(str(exc))
    return f"error kind={type(exc).__name__} message={message}"


# ─── Throttled warnings ──────────────────────────────────────

_last_warning_time: dict = {}  # category → timestamp
WARNING_COOLDOWN = 60  # seconds between repeats of one category


def warn_once(category: str, message: str, force: bool = False) -> bool:
    """
    Log a warning, throttled per category so per-event loops don't flood the log.

    Returns True if logged, False if throttled.
    """
    now = time.time()
    if not force and category in _last_warning_time:
        if now - _last_warning_time[category] < WARNING_COOLDOWN:
            logger.debug(f"Warning throttled ({category}): {message}")
            return False
    _last_warning_time[category] = now
    logger.warning(message)
    return True
