import logging
import sys
from typing import Any, Dict, Optional

import structlog
from rich.console import Console
from rich.logging import RichHandler

from reloc_kit.core.config import get_settings


def setup_logging(level: Optional[str] = None) -> None:
    """Set up structured logging; everything goes to stderr so stdout stays clean."""

    settings = get_settings()
    log_level = getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO)
    timestamper = structlog.processors.TimeStamper(fmt="ISO")

    shared_processors = [
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.stdlib.PositionalArgumentsFormatter(),
        timestamper,
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.UnicodeDecoder(),
    ]

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    if settings.LOG_FORMAT == "json" or settings.is_production:
        structlog.configure(
            processors=shared_processors
            + [
                structlog.processors.dict_tracebacks,
                structlog.processors.JSONRenderer(),
            ],
            wrapper_class=structlog.stdlib.BoundLogger,
            logger_factory=structlog.stdlib.LoggerFactory(),
            cache_logger_on_first_use=True,
        )

        logging.basicConfig(
            format="%(message)s",
            stream=sys.stderr,
            level=log_level,
            force=True,
        )
    else:
        console = Console(stderr=True, color_system="auto")

        structlog.configure(
            processors=shared_processors + [structlog.dev.ConsoleRenderer(colors=True)],
            wrapper_class=structlog.stdlib.BoundLogger,
            logger_factory=structlog.stdlib.LoggerFactory(),
            cache_logger_on_first_use=True,
        )

        logging.basicConfig(
            level=log_level,
            format="%(message)s",
            datefmt="[%X]",
            handlers=[
                RichHandler(
                    console=console,
                    rich_tracebacks=True,
                    tracebacks_show_locals=settings.DEBUG,
                )
            ],
            force=True,
        )


def get_logger(name: str = __name__) -> structlog.stdlib.BoundLogger:
    """Get a structured logger instance."""
    return structlog.get_logger(name)


def log_stage(stage: str, event: str, **kwargs: Any) -> None:
    """Log a pipeline stage milestone (started, finished, artifact written)."""
    logger = get_logger("reloc_kit.stage")
    logger.info(event, stage=stage, **kwargs)


def log_numeric_event(component: str, event: str, **kwargs: Any) -> None:
    """Log solver/training progress at debug level."""
    logger = get_logger(f"reloc_kit.{component}")
    logger.debug(event, **kwargs)


def log_error(error: Exception, context: Optional[Dict[str, Any]] = None) -> None:
    """Log errors with context."""
    logger = get_logger("reloc_kit.error")
    logger.error(
        "Stage error",
        error=str(error),
        error_type=type(error).__name__,
        context=context or {},
    )
