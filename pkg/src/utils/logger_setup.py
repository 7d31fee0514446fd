import logging
import os
from logging.handlers import RotatingFileHandler

ROOT_LOGGER_NAME = "Materializer"
DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logger(log_dir=None, log_level='INFO', log_format=DEFAULT_FORMAT, log_filename='run.log'):
    """
    Sets up the logger for the application.

    Args:
        log_dir (str | None): Directory for the log file; console only when None.
        log_level (str): The logging level (e.g., 'INFO', 'DEBUG').
        log_format (str): The format for the log messages.
        log_filename (str): Name of the rotating log file inside log_dir.

    Returns:
        logging.Logger: The configured root logger of the "Materializer" hierarchy.
    """
    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.setLevel(getattr(logging, str(log_level).upper(), logging.INFO))

    # Prevent adding multiple handlers if the function is called more than once
    if logger.hasHandlers():
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter(log_format))
    logger.addHandler(console_handler)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, log_filename)
        file_handler = RotatingFileHandler(log_file, maxBytes=10*1024*1024, backupCount=5, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(log_format))
        logger.addHandler(file_handler)

    return logger
