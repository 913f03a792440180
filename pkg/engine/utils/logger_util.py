from concurrent_log_handler import ConcurrentRotatingFileHandler
import logging
from pathlib import Path
from functools import lru_cache
from typing import Optional, Union

from engine.utils.config_util import load_config

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
MAX_LOG_SIZE = 100 * 1024 * 1024  # 100MB
BACKUP_COUNT = 3


def level_for_mode(mode: str) -> int:
    """DEBUG for development runs, INFO otherwise"""
    return logging.DEBUG if mode == "development" else logging.INFO


class LogSetup:
    """
    One log directory for the process (RPC_LOG_DIR). Every named logger gets a
    rotating file there, safe for several worker processes writing at once.
    """
    _instance = None
    _loggers = {}
    _log_dir = Path("logs")

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(LogSetup, cls).__new__(cls)
            cls._log_dir = load_config().log_dir()
            cls._log_dir.mkdir(parents=True, exist_ok=True)
        return cls._instance

    @classmethod
    def log_dir(cls) -> Path:
        return cls._log_dir

    @staticmethod
    def _file_handler(path: Path, formatter: logging.Formatter) -> logging.Handler:
        path.parent.mkdir(parents=True, exist_ok=True)
        handler = ConcurrentRotatingFileHandler(str(path), maxBytes=MAX_LOG_SIZE, backupCount=BACKUP_COUNT,
                                                encoding='utf-8')
        handler.setFormatter(formatter)
        return handler

    @classmethod
    def setup_logger(cls, name: str, log_path: Optional[Union[str, Path]] = None, level: Optional[int] = None,
                     console: bool = True) -> logging.Logger:
        """
        Args:
            name: Logger name
            log_path: Log file, defaults to <log dir>/<name>.log
            level: Defaults to the level for MODE
            console: Also write to stderr
        """
        if name in cls._loggers:
            return cls._loggers[name]

        logger = logging.getLogger(name)
        logger.setLevel(level if level is not None else level_for_mode(load_config().mode()))
        logger.propagate = False
        logger.handlers.clear()

        formatter = logging.Formatter(LOG_FORMAT)
        if console:
            stream_handler = logging.StreamHandler()
            stream_handler.setFormatter(formatter)
            logger.addHandler(stream_handler)

        path = Path(log_path) if log_path is not None else cls._log_dir / f"{name.replace('.', '_')}.log"
        logger.addHandler(cls._file_handler(path, formatter))

        cls._loggers[name] = logger
        return logger


@lru_cache(maxsize=None)
def get_logger(name: str, log_path: Optional[Union[str, Path]] = None, level: Optional[int] = None,
               console: bool = True) -> logging.Logger:
    """
    Example:
        >>> logger = get_logger("engine_logger", console=False)  # logs/engine_logger.log
        >>> logger.info("cascade built")
    """
    return LogSetup().setup_logger(name, log_path, level, console)
