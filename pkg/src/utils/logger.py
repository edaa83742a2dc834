"""
Logging utilities with rotation and structured context.
"""
import logging
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

from src.config.settings import LoggingConfig

RUN_LOG_HANDLER = "augcl-run-log"


class StructuredFormatter(logging.Formatter):
    """Formatter that appends structured fields as ``key=value`` pairs."""

    def format(self, record: logging.LogRecord) -> str:
        msg = super().format(record)
        structured = getattr(record, "structured", None) or {}
        if structured:
            pairs = " ".join(f"{key}={_render(value)}" for key, value in structured.items())
            msg = f"{msg} | {pairs}"
        return msg


def _render(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class StructuredLogger:
    """Wrapper for structured logging with context."""

    def __init__(self, logger: logging.Logger):
        self.logger = logger
        self.context: Dict[str, Any] = {}

    def set_context(self, **kwargs):
        """Set persistent context for all log messages."""
        self.context.update(kwargs)

    def clear_context(self):
        """Clear the logging context."""
        self.context.clear()

    def _log(self, level: int, msg: str, extra: Optional[Dict] = None, exc_info: bool = False, **kwargs):
        """Internal logging method with context injection."""
        log_extra = self.context.copy()
        if extra:
            log_extra.update(extra)
        log_extra.update(kwargs)
        self.logger.log(level, msg, extra={"structured": log_extra}, exc_info=exc_info)

    def debug(self, msg: str, **kwargs):
        self._log(logging.DEBUG, msg, **kwargs)

    def info(self, msg: str, **kwargs):
        self._log(logging.INFO, msg, **kwargs)

    def warning(self, msg: str, **kwargs):
        self._log(logging.WARNING, msg, **kwargs)

    def error(self, msg: str, **kwargs):
        self._log(logging.ERROR, msg, **kwargs)

    def critical(self, msg: str, **kwargs):
        self._log(logging.CRITICAL, msg, **kwargs)

    def is_enabled_for(self, level: int) -> bool:
        return self.logger.isEnabledFor(level)


class _StructuredFilter(logging.Filter):
    """Add empty structured data to avoid KeyError in formatters."""

    def filter(self, record):
        if not hasattr(record, "structured"):
            record.structured = {}
        return True


def setup_logger(
    name: str,
    config: LoggingConfig,
    log_to_console: bool = True,
    log_to_file: Optional[bool] = None,
) -> StructuredLogger:
    """
    Set up a logger with rotation.

    Args:
        name: Logger name
        config: Logging configuration
        log_to_console: Whether to log to console
        log_to_file: Whether to log to file (defaults to ``config.log_to_file``)

    Returns:
        StructuredLogger instance
    """
    if log_to_file is None:
        log_to_file = config.log_to_file

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, config.log_level.upper()))
    logger.handlers.clear()

    detailed_formatter = StructuredFormatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    console_formatter = StructuredFormatter(
        "%(asctime)s - %(levelname)s - %(message)s",
        datefmt="%H:%M:%S",
    )

    if log_to_console:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(console_formatter)
        logger.addHandler(console_handler)

    if log_to_file:
        config.log_dir.mkdir(parents=True, exist_ok=True)
        log_file = config.log_dir / f"{name}_{datetime.now().strftime('%Y%m%d')}.log"
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=config.max_log_size_mb * 1024 * 1024,
            backupCount=config.log_retention_count,
            encoding="utf-8",
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(detailed_formatter)
        logger.addHandler(file_handler)

        error_file = config.log_dir / f"{name}_errors.log"
        error_handler = RotatingFileHandler(
            error_file,
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=3,
            encoding="utf-8",
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(detailed_formatter)
        logger.addHandler(error_handler)

    # Prevent propagation to root logger
    logger.propagate = False
    for handler in logger.handlers:
        handler.addFilter(_StructuredFilter())

    return StructuredLogger(logger)


def get_logger(name: str) -> StructuredLogger:
    """Get an existing logger or create a new one with default config.

    Package loggers (``src.*``) propagate to the ``src`` logger, which is
    configured once from the environment and reconfigured by ``main.py``.
    """
    root_name = name.split(".", 1)[0]
    root = logging.getLogger(root_name)
    if not root.handlers:
        setup_logger(root_name, LoggingConfig(), log_to_file=False)
    return StructuredLogger(logging.getLogger(name))


def attach_run_log(logger_name: str, run_dir: Path) -> logging.Handler:
    """Mirror everything under ``logger_name`` into ``<run_dir>/run.log``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    logger = logging.getLogger(logger_name)
    handler = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    handler.set_name(RUN_LOG_HANDLER)
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(
        StructuredFormatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s", datefmt="%Y-%m-%d %H:%M:%S")
    )
    handler.addFilter(_StructuredFilter())
    logger.addHandler(handler)
    return handler


def detach_run_log(logger_name: str, handler: logging.Handler) -> None:
    logging.getLogger(logger_name).removeHandler(handler)
    handler.close()
