import logging
import os
import sys
from typing import Optional

LOG_ENV_VAR = 'FLAPGUARD_LOG'
DEFAULT_LEVEL = 'WARNING'
LOG_FORMAT = 'ts=%(asctime)s level=%(levelname)s logger=%(name)s %(message)s'


def resolve_level(level: Optional[str] = None) -> int:
    """
    Resolve a log level name, falling back to the ``FLAPGUARD_LOG``
    environment variable and then to WARNING.

    Unknown names resolve to WARNING instead of failing.
    """
    name = (level or os.environ.get(LOG_ENV_VAR) or DEFAULT_LEVEL).upper()
    resolved = logging.getLevelName(name)
    if not isinstance(resolved, int):
        return logging.WARNING
    return resolved


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """
    Install a stderr handler on the ``flapguard`` logger.

    Only the command line front end calls this; library code
    just uses ``logging.getLogger(__name__)``.
    """
    logger = logging.getLogger('flapguard')
    logger.setLevel(resolve_level(level))
    handlers = [h for h in logger.handlers if getattr(h, '_flapguard', False)]
    if handlers:
        handlers[0].stream = sys.stderr
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._flapguard = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    logger.propagate = False
    return logger
