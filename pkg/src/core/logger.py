"""
Logger module for the place recognition pipeline.
"""

import os
import sys
import logging
import threading
from datetime import datetime

ROOT_LOGGER_NAME = 'PlaceRecognizer'

_SETUP_LOCK = threading.Lock()


class PlaceLogger:
    """Logger class shared by all pipeline stages."""

    def __init__(self, component: str = None):
        self._setup_logger()
        name = ROOT_LOGGER_NAME if not component else f'{ROOT_LOGGER_NAME}.{component}'
        self.logger = logging.getLogger(name)

    @staticmethod
    def _setup_logger():
        """Setup logging configuration once per process."""
        root = logging.getLogger(ROOT_LOGGER_NAME)
        with _SETUP_LOCK:
            if not getattr(root, '_place_configured', False):
                PlaceLogger._attach_handlers(root)
                root._place_configured = True

    @staticmethod
    def _attach_handlers(root: logging.Logger):
        formatter = logging.Formatter(
            '%(asctime)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        log_dir = os.getenv('VPR_LOG_DIR') or os.path.join(
            os.path.expanduser('~'), '.place_recognizer', 'logs')
        try:
            os.makedirs(log_dir, exist_ok=True)
            log_file = os.path.join(
                log_dir, f'place_recognizer_{datetime.now().strftime("%Y%m%d")}.log')
            file_handler = logging.FileHandler(log_file)
            file_handler.setFormatter(formatter)
            file_handler.setLevel(logging.DEBUG)
            root.addHandler(file_handler)
        except OSError:
            pass

        # Console handler
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
        console_handler.setLevel(logging.WARNING)
        root.addHandler(console_handler)

        root.setLevel(logging.DEBUG)
        root.propagate = False

    def debug(self, message: str):
        """Log debug message."""
        self.logger.debug(message)

    def info(self, message: str):
        """Log info message."""
        self.logger.info(message)

    def warning(self, message: str):
        """Log warning message."""
        self.logger.warning(message)

    def error(self, message: str):
        """Log error message."""
        self.logger.error(message)
