#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : hashing, version and directory helpers
"""

import hashlib
import json
import os
import platform
from typing import Any

import numpy as np
import PIL
import scipy

from depthsup.core.logger import logger


def get_config_md5(settings: dict[str, Any]) -> str:
    """
    MD5 of a configuration mapping in canonical JSON form.

    Args:
        settings: JSON-serializable configuration

    Returns:
        str: hex digest, independent of key order
    """
    canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"))
    return hashlib.md5(canonical.encode("utf-8")).hexdigest()


def get_versions(app_version: str) -> dict[str, str]:
    """Versions recorded in provenance files."""
    return {
        "depthsup": app_version,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pillow": PIL.__version__,
    }


def create_directory(dir_path: str) -> bool:
    """
    Create directory if it doesn't exist.

    Args:
        dir_path: Path to directory

    Returns:
        bool: True if directory exists or was created, False on error
    """
    if not os.path.exists(dir_path):
        try:
            os.makedirs(dir_path)
            logger.debug("Created output directory %s", dir_path)
            return True
        except OSError as e:
            logger.error("Cannot create output directory %s: %s", dir_path, e)
            return False
    return True
