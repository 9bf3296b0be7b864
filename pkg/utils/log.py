import sys

from loguru import logger

LOG_FILE = "./logs/superbloom_{time:YYYY-MM-DD}.log"
CONSOLE_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {message}"

logger.remove()
_console_sink = logger.add(sys.stderr, level="INFO", format=CONSOLE_FORMAT)
logger.add(
    sink=LOG_FILE,
    rotation="00:00",
    retention="7 days",
    level="INFO",
)


def set_console_level(level: str) -> None:
    """Swap the stderr sink for one at ``level``; the daily file keeps INFO."""
    global _console_sink
    logger.remove(_console_sink)
    _console_sink = logger.add(sys.stderr, level=level.upper(), format=CONSOLE_FORMAT)
