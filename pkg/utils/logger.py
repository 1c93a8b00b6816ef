"""Package loggers: console on stderr plus an optional rotating log file"""
import logging
import logging.handlers

from config import LOG_FILE, LOG_LEVEL

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

_configured = []


def _level(name: str) -> int:
    level = logging.getLevelName(str(name).upper())
    return level if isinstance(level, int) else logging.INFO


def setup_logger(name: str) -> logging.Logger:
    """
    Logger for one module

    Console output always goes to stderr so command results on stdout stay
    clean. The file handler is skipped when SCMA_LOG_FILE is set empty.
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    level = _level(LOG_LEVEL)
    logger.setLevel(level)
    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if LOG_FILE:
        file_handler = logging.handlers.RotatingFileHandler(
            LOG_FILE,
            maxBytes=10485760,  # 10MB
            backupCount=5,
            encoding='utf-8',
        )
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False
    _configured.append(logger)
    return logger


def set_console_level(level: str) -> None:
    """Change the verbosity of every package logger created so far"""
    value = _level(level)
    # the file handler keeps LOG_LEVEL, so the logger must pass both
    floor = min(value, _level(LOG_LEVEL)) if LOG_FILE else value
    for logger in _configured:
        logger.setLevel(floor)
        for handler in logger.handlers:
            if not isinstance(handler, logging.handlers.RotatingFileHandler):
                handler.setLevel(value)
