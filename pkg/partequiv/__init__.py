"""Partial group-equivariant CNNs on a small numpy tensor engine."""
import logging
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from config import config
from partequiv.version import __version__

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def get_config(config_name=None):
    """Resolve a preset class by name, PARTEQUIV_CONFIG, or the default."""
    config_name = config_name or os.environ.get('PARTEQUIV_CONFIG') or 'default'
    return config.get(config_name, config['default'])


def configure_logging(config_name=None, log_dir=None):
    """
    Set the package log level and, outside testing, log to train.log in log_dir.

    Args:
        config_name: Preset name ('default', 'development', 'desk', 'testing')
        log_dir: Directory for the log file; no file handler when None

    Returns:
        The package logger
    """
    preset = get_config(config_name)
    level = os.environ.get('PARTEQUIV_LOG_LEVEL', preset.LOG_LEVEL).upper()
    package_logger = logging.getLogger('partequiv')
    package_logger.setLevel(getattr(logging, level, logging.INFO))

    if log_dir is not None and preset.LOG_TO_FILE:
        os.makedirs(log_dir, exist_ok=True)
        log_path = os.path.abspath(os.path.join(log_dir, 'train.log'))
        existing = [h for h in package_logger.handlers
                    if isinstance(h, logging.FileHandler) and h.baseFilename == log_path]
        if not existing:
            file_handler = logging.FileHandler(log_path)
            file_handler.setLevel(package_logger.level)
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            package_logger.addHandler(file_handler)

    return package_logger


__all__ = ['__version__', 'configure_logging', 'get_config']
