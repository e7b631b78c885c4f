"""
Logging helpers.

All loggers live under the ``hartreelab`` namespace. Library code never
configures handlers; the command line entry point does.
"""
import logging
import os

ROOT = "hartreelab"
LEVEL_ENV = "HARTREELAB_LOG_LEVEL"


def get_logger(name: str | None = None) -> logging.Logger:
    """Return a logger under the package namespace."""
    if not name or name == ROOT:
        return logging.getLogger(ROOT)
    if not name.startswith(ROOT + "."):
        name = f"{ROOT}.{name}"
    return logging.getLogger(name)


def log_error(message: str, title: str | None = None, level: int = logging.WARNING):
    """Record a recoverable problem and carry on."""
    logger = get_logger(title)
    logger.log(level, message)


def configure(verbose: bool = False):
    """Attach a stderr handler. Only the CLI calls this."""
    level_name = os.environ.get(LEVEL_ENV)
    if verbose:
        level = logging.DEBUG
    elif level_name:
        level = getattr(logging, level_name.upper(), logging.INFO)
    else:
        level = logging.INFO

    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    get_logger().setLevel(level)
