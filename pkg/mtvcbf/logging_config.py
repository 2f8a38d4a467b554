import os
import signal
import logging
from typing import Optional

LOG_LEVELS = {
    'DEBUG': logging.DEBUG,
    'INFO': logging.INFO,
    'WARNING': logging.WARNING,
    'ERROR': logging.ERROR,
    'CRITICAL': logging.CRITICAL
}
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = 'mtvcbf.log'

logger = logging.getLogger('mtvcbf')
current_log_level = 'INFO'


def configure_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """Attach stream and file handlers to the package logger.

    The level comes from the argument, then LOG_LEVEL, then INFO; unknown
    names fall back to INFO. The log file goes to log_dir, then LOG_DIR,
    then ./logs. Calling it again replaces the handlers.
    """
    global current_log_level
    name = (level or os.getenv('LOG_LEVEL', 'INFO')).upper()
    current_log_level = name if name in LOG_LEVELS else 'INFO'

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    handler = logging.StreamHandler()
    handler.setFormatter(formatter)
    logger.addHandler(handler)
    logger.setLevel(LOG_LEVELS[current_log_level])

    logs_dir = log_dir or os.getenv('LOG_DIR', 'logs')
    try:
        os.makedirs(logs_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(logs_dir, LOG_FILE))
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
        logger.debug(f"Logging to {os.path.join(logs_dir, LOG_FILE)}")
    except Exception as e:
        logger.warning(f"Could not set up file logging: {e}")

    return logger


def cycle_log_level(signum, frame):
    """Rotate through log levels: INFO -> DEBUG -> WARNING -> INFO"""
    global current_log_level
    if current_log_level == 'INFO':
        current_log_level = 'DEBUG'
    elif current_log_level == 'DEBUG':
        current_log_level = 'WARNING'
    else:
        current_log_level = 'INFO'

    logger.setLevel(LOG_LEVELS[current_log_level])
    logger.info(f"Log level changed to: {current_log_level}")


def install_level_signal():
    """SIGUSR1 on POSIX, Ctrl+Break on Windows, cycles the log level of a running command"""
    if os.name == 'posix':
        signal.signal(signal.SIGUSR1, cycle_log_level)
        logger.debug("Send SIGUSR1 signal to change log level (kill -SIGUSR1 PID)")
    else:
        try:
            signal.signal(signal.SIGBREAK, cycle_log_level)
            logger.debug("Press Ctrl+Break to change log level")
        except AttributeError:
            logger.warning("Log level change via signal not supported on this platform")
