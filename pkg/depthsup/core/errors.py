#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : exception hierarchy
"""


class DepthSupError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(DepthSupError):
    """Invalid or inconsistent configuration value."""


class GeometryError(DepthSupError):
    """Camera model or pose precondition violated."""


class InvalidDepthError(GeometryError):
    """Depth is not strictly positive."""


class BehindCameraError(GeometryError):
    """Point lies on or behind the image plane (z <= 0)."""


class SceneError(DepthSupError):
    """Synthetic scene specification cannot be rendered."""


class EvaluationError(DepthSupError):
    """Metric preconditions violated (empty mask, zero median)."""


class ParseError(DepthSupError):
    """Malformed file. ``offset`` is the byte position where parsing stopped."""

    def __init__(self, message: str, offset: int = 0, path: str | None = None):
        self.offset = offset
        self.path = path
        location = f"{path}: " if path else ""
        super().__init__(f"{location}{message} (byte offset {offset})")


class ImageError(DepthSupError):
    """Image buffer precondition violated (shape, finiteness, size)."""
