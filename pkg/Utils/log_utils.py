import os
import sys
import logging
import datetime
from typing import Optional

LOG_LEVEL_DEBUG = logging.DEBUG
LOG_LEVEL_WARNING = logging.WARNING

# Verbosity tiers for debug_at_level
DEBUG_L1 = 1  # one line per public operation: solve finished, check verdicts
DEBUG_L2 = 2  # resolved configuration, raster statistics, facet masses, accepted steps
DEBUG_L3 = 3  # minimizer inner iterations and backtracking trials, high volume

# Holds a level name (DEBUG, INFO, WARNING, ERROR)
LOG_ENV_VAR = "CAPMINK_LOG"

LEVEL_NAMES = {name: getattr(logging, name) for name in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")}

_RESET = '\033[0m'
_LEVEL_COLORS = {
    logging.DEBUG: '\033[34m',
    logging.INFO: '\033[32m',
    logging.WARNING: '\033[33m',
    logging.ERROR: '\033[31m',
    logging.CRITICAL: '\033[1m\033[31m',
}

_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
_DATEFMT = '%Y-%m-%d %H:%M:%S'


class ColoredFormatter(logging.Formatter):
    """Formatter that wraps the level name in an ANSI color."""

    def format(self, record):
        color = _LEVEL_COLORS.get(record.levelno)
        if color:
            record = logging.makeLogRecord(record.__dict__)
            record.levelname = f"{color}{record.levelname}{_RESET}"
        return super().format(record)


class Logger:
    """
    Process-wide logger for capmink.

    Everything goes to stderr; stdout carries JSON results only.
    Singleton, obtain it through get_logger().
    """
    _instance = None

    @classmethod
    def get_instance(cls):
        if cls._instance is None:
            cls._instance = Logger()
        return cls._instance

    def __init__(self):
        if Logger._instance is not None:
            raise Exception("Logger already exists! Use get_logger() instead.")

        self.logger = logging.getLogger('capmink')
        self.logger.setLevel(logging.WARNING)
        self.logger.propagate = False

        self.formatter = logging.Formatter(_FORMAT, datefmt=_DATEFMT)
        self.colored_formatter = ColoredFormatter(_FORMAT, datefmt=_DATEFMT)

        self.console_handler = logging.StreamHandler(sys.stderr)
        self.console_handler.setFormatter(self.formatter)
        self.console_handler.setLevel(logging.WARNING)
        self.logger.addHandler(self.console_handler)

        self.file_handler = None
        self.log_directory = "logs"
        self.verbose = False
        self.current_debug_level = DEBUG_L1
        self.colored_output = False

        Logger._instance = self

    def configure(self, verbose: bool = False, console_level: int = logging.WARNING,
                  log_directory: Optional[str] = None, debug_level: int = DEBUG_L1,
                  colored_output: bool = False):
        """
        Set console verbosity.

        Args:
            verbose: Emit debug_at_level messages (forces the console to DEBUG)
            console_level: Console threshold when not verbose
            log_directory: Where configure_file_logging writes
            debug_level: Highest debug_at_level tier that is printed (1-3)
            colored_output: Color level names on the console
        """
        self.verbose = verbose
        self.set_debug_level(debug_level)
        self.colored_output = colored_output
        self.console_handler.setFormatter(self.colored_formatter if colored_output else self.formatter)

        min_level = logging.DEBUG if verbose else console_level
        self.console_handler.setLevel(min_level)
        self.logger.setLevel(min(min_level, self.file_handler.level) if self.file_handler else min_level)

        if log_directory:
            self.log_directory = log_directory

        self.debug_at_level(DEBUG_L2, "Logger", f"console level {logging.getLevelName(min_level)}, "
                            f"debug tier {self.current_debug_level}, colored={colored_output}")

    def configure_from_env(self, default_level: int = logging.WARNING):
        """Apply the level named in CAPMINK_LOG and return it. DEBUG turns verbose mode on."""
        raw = os.environ.get(LOG_ENV_VAR, "").strip().upper()
        level = LEVEL_NAMES.get(raw, default_level)
        if raw and raw not in LEVEL_NAMES:
            self.warning("Logger", f"Ignoring unknown {LOG_ENV_VAR} value '{raw}'")
        self.configure(verbose=level <= logging.DEBUG, console_level=level,
                       debug_level=self.current_debug_level, colored_output=self.colored_output)
        return level

    def configure_file_logging(self, enabled: bool = True, level: int = logging.DEBUG,
                               filename: Optional[str] = None):
        """Replace the file handler; the default name is capmink_<timestamp>.log under log_directory."""
        self._close_file_handler()
        if not enabled:
            return

        os.makedirs(self.log_directory, exist_ok=True)
        if not filename:
            filename = f"capmink_{datetime.datetime.now():%Y%m%d_%H%M%S}.log"

        log_path = os.path.join(self.log_directory, filename)
        self.file_handler = logging.FileHandler(log_path, mode='a')
        self.file_handler.setFormatter(self.formatter)
        self.file_handler.setLevel(level)
        self.logger.addHandler(self.file_handler)
        self.logger.setLevel(min(self.logger.level, level))

        self.info("Logger", f"writing log to {log_path}")

    def set_debug_level(self, level: int):
        if level not in (DEBUG_L1, DEBUG_L2, DEBUG_L3):
            self.warning("Logger", f"Invalid debug level: {level}. Using default level 1.")
            level = DEBUG_L1
        self.current_debug_level = level

    def debug_at_level(self, level: int, module: str, message: str):
        """Log at DEBUG when verbose and level does not exceed the configured tier."""
        if self.verbose and level <= self.current_debug_level:
            self.logger.debug(f"[{module}][L{level}] {message}")

    def info(self, module: str, message: str):
        self.logger.info(f"[{module}] {message}")

    def warning(self, module: str, message: str):
        self.logger.warning(f"[{module}] {message}")

    def error(self, module: str, message: str):
        self.logger.error(f"[{module}] {message}")

    def _close_file_handler(self):
        if self.file_handler:
            self.logger.removeHandler(self.file_handler)
            self.file_handler.close()
            self.file_handler = None

    def shutdown(self):
        self._close_file_handler()
        self.console_handler.flush()


def get_logger():
    """Get the singleton Logger instance."""
    return Logger.get_instance()
