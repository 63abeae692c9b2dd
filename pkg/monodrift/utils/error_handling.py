"""
Errors and logging for monodrift.

This module holds the logging setup, the exception hierarchy shared by every
monodrift module, and a small wrapper that logs failures before re-raising them.
"""

import logging
from typing import Any, Callable, List, Optional, Tuple, TypeVar

T = TypeVar("T")

logger = logging.getLogger(__name__)


class MonodriftError(Exception):
    """Base class for all monodrift errors."""

    exit_code = 1


class UsageError(MonodriftError, ValueError):
    """Raised when an operation is called with invalid arguments."""


class DimensionError(UsageError):
    """Raised when an array length disagrees with the Galerkin space."""


class ConfigurationError(MonodriftError):
    """Raised when a model, noise or run configuration is structurally invalid."""

    exit_code = 2


class ConfigValidationError(ConfigurationError):
    """Raised when a config file fails validation.

    Args:
        errors: List of (key path, line number or None, message) triples
    """

    def __init__(self, errors: List[Tuple[str, Optional[int], str]]):
        self.errors = list(errors)
        lines = []
        for key, line, message in self.errors:
            where = f"line {line}" if line is not None else "line ?"
            lines.append(f"{key} ({where}): {message}")
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class InadmissibleEpsilonError(MonodriftError):
    """Raised when the noise intensity lies outside the admissible range."""


class BlowupError(MonodriftError):
    """Raised when a time step produces nonfinite coefficients.

    Args:
        step: Index of the offending step
        time: Time at the start of the offending step
    """

    def __init__(self, step: int, time: float, detail: str = ""):
        self.step = step
        self.time = time
        message = f"nonfinite state at step {step} (t={time:.6g})"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class InsufficientDataError(MonodriftError):
    """Raised when a fit has too few usable data points."""


def setup_logging(verbose: bool = False) -> None:
    """Configure the root logger for a command-line run.

    Args:
        verbose: Log at DEBUG instead of INFO
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    # matplotlib's font manager is chatty at DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def safe_execute(func: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    """Run ``func`` and log any failure under the callable's name before re-raising.

    Known :class:`MonodriftError` failures are logged as a one-line message;
    anything else is logged with its traceback.

    Raises:
        Exception: Whatever ``func`` raised
    """
    name = getattr(func, "__name__", repr(func))
    try:
        return func(*args, **kwargs)
    except MonodriftError as exc:
        logger.error("Error executing %s: %s", name, exc)
        raise
    except Exception:
        logger.exception("Unexpected failure in %s", name)
        raise
