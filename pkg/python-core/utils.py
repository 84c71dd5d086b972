"""
SA3: Utilities
Logging setup and deterministic output writers shared by the CLI commands.
"""

import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from standards.errors import InvalidArgumentError

LOG_ENV = 'SA3_LOG'
LOG_LEVELS = {
    'debug': logging.DEBUG,
    'info': logging.INFO,
    'warning': logging.WARNING,
    'error': logging.ERROR,
}
LOG_FORMAT = '%(levelname)s %(name)s: %(message)s'


def log_level(name: Optional[str] = None) -> int:
    """Level from `name`, else from $SA3_LOG, else warning.

    Raises:
        InvalidArgumentError: unknown level name
    """
    if name is None:
        name = os.environ.get(LOG_ENV, 'warning')
    try:
        return LOG_LEVELS[name.strip().lower()]
    except KeyError:
        raise InvalidArgumentError(
            f"{LOG_ENV} must be one of {', '.join(LOG_LEVELS)}, got '{name}'") from None


def configure_logging(name: Optional[str] = None) -> int:
    """Send log records to stderr; stdout stays machine-readable."""
    level = log_level(name)
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT, force=True)
    return level


def write_json(path: Union[str, Path], data: Any) -> Path:
    """Sorted keys and a trailing newline, so equal data gives equal bytes."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return target


def write_lines(path: Union[str, Path], lines: Iterable[str]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(''.join(f"{line}\n" for line in lines), encoding='utf-8')
    return target


def is_empty_dir(path: Union[str, Path]) -> bool:
    target = Path(path)
    return not target.exists() or (target.is_dir() and not any(target.iterdir()))


def format_percent(value: float) -> str:
    return f"{100.0 * value:.1f}"
