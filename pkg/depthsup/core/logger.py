#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : package logger writing to a rotating file and to stderr
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Any

from depthsup.config import config

LOG_FILE_NAME = "depthsup.log"
LEVEL_ENV_VAR = "DEPTHSUP_LOG_LEVEL"


def resolve_level(name: str) -> int | None:
    """Numeric level of a level name such as ``"debug"``; None when the name is unknown."""
    level = logging.getLevelName(name.strip().upper())
    return level if isinstance(level, int) else None


class RunLogger:
    """
    Named logger whose handlers are attached on the first record.

    Records go to ``<log_dir>/depthsup.log``, rotated at ``log_max_bytes``
    with ``log_backup_count`` backups kept, and to stderr; stdout carries
    the JSON reports of the command line only. ``DEPTHSUP_LOG_LEVEL``
    overrides the configured level.
    """

    def __init__(self, name: str = "depthsup", log_dir: str | None = None, level: str | None = None):
        self.name = name
        self.log_dir = config.log_dir if log_dir is None else log_dir
        requested = level or os.environ.get(LEVEL_ENV_VAR) or config.log_level
        resolved = resolve_level(requested)
        self.rejected_level = None if resolved is not None else requested
        self.level = resolved if resolved is not None else resolve_level(config.log_level) or logging.INFO
        self._logger: logging.Logger | None = None

    @property
    def log_path(self) -> str:
        return os.path.join(self.log_dir, LOG_FILE_NAME)

    @property
    def attached(self) -> bool:
        return self._logger is not None

    def _named(self) -> logging.Logger:
        if self._logger is None:
            self._logger = self._attach()
            if self.rejected_level is not None:
                self._logger.warning("Unknown log level %r, using %s", self.rejected_level,
                                     logging.getLevelName(self.level))
        return self._logger

    def _attach(self) -> logging.Logger:
        os.makedirs(self.log_dir, exist_ok=True)
        formatter = logging.Formatter(config.log_format, config.log_date_format)
        rotating = RotatingFileHandler(
            self.log_path,
            maxBytes=config.log_max_bytes,
            backupCount=config.log_backup_count,
            encoding="utf-8",
        )
        named = logging.getLogger(self.name)
        for handler in (rotating, logging.StreamHandler()):
            handler.setFormatter(formatter)
            named.addHandler(handler)
        named.setLevel(self.level)
        named.propagate = False
        return named

    def close(self) -> None:
        """Flush and detach the handlers; the next record attaches fresh ones."""
        if self._logger is None:
            return
        for handler in list(self._logger.handlers):
            self._logger.removeHandler(handler)
            handler.close()
        self._logger = None

    def enabled_for(self, level: int) -> bool:
        return self.level <= level

    def debug(self, message: Any, *args: Any) -> None:
        if self.enabled_for(logging.DEBUG):
            self._named().debug(message, *args)

    def info(self, message: Any, *args: Any) -> None:
        if self.enabled_for(logging.INFO):
            self._named().info(message, *args)

    def warning(self, message: Any, *args: Any) -> None:
        self._named().warning(message, *args)

    def error(self, message: Any, *args: Any) -> None:
        self._named().error(message, *args)

    def critical(self, message: Any, *args: Any) -> None:
        self._named().critical(message, *args)


logger = RunLogger()
