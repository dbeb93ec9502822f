#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : PFM, Middlebury .flo, PGM/PPM and JSON readers and writers
"""

import json
import os
from typing import Any

import numpy as np
from PIL import Image, UnidentifiedImageError

from depthsup.core.errors import ParseError
from depthsup.core.geometry import DepthMap, FlowField
from depthsup.core.imaging import FeaturePyramid, ImagePlane
from depthsup.core.logger import logger

FLO_MAGIC = 202021.25
# Middlebury convention for unknown flow
FLO_UNKNOWN = 1e10
FLO_UNKNOWN_THRESHOLD = 1e9


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise ParseError(f"cannot read file: {e}", 0, path) from e


def _header_token(buffer: bytes, offset: int, path: str) -> tuple[bytes, int]:
    """Next newline-terminated header line and the offset just past it."""
    end = buffer.find(b"\n", offset)
    if end < 0:
        raise ParseError("truncated header", offset, path)
    return buffer[offset:end].strip(), end + 1


def read_pfm(path: str) -> np.ndarray:
    """
    Read a PFM file.

    Args:
        path: Path to the file

    Returns:
        np.ndarray: float32 array, H x W for "Pf" and H x W x 3 for "PF", top row first
    """
    buffer = _read_bytes(path)
    kind, offset = _header_token(buffer, 0, path)
    if kind not in (b"Pf", b"PF"):
        raise ParseError(f"bad PFM magic {kind!r}", 0, path)
    channels = 1 if kind == b"Pf" else 3

    size_offset = offset
    size, offset = _header_token(buffer, offset, path)
    try:
        width, height = (int(item) for item in size.split())
    except ValueError as e:
        raise ParseError(f"bad PFM dimensions {size!r}", size_offset, path) from e
    if width < 1 or height < 1:
        raise ParseError(f"bad PFM dimensions {width}x{height}", size_offset, path)

    scale_offset = offset
    scale_text, offset = _header_token(buffer, offset, path)
    try:
        scale = float(scale_text)
    except ValueError as e:
        raise ParseError(f"bad PFM scale {scale_text!r}", scale_offset, path) from e
    if scale == 0:
        raise ParseError("PFM scale must be non-zero", scale_offset, path)
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")

    expected = width * height * channels * 4
    if len(buffer) - offset < expected:
        raise ParseError(
            f"expected {expected} bytes of pixel data, found {len(buffer) - offset}", len(buffer), path
        )
    data = np.frombuffer(buffer, dtype=dtype, count=width * height * channels, offset=offset)
    shape = (height, width) if channels == 1 else (height, width, 3)
    # rows are stored bottom to top
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path: str, data: np.ndarray) -> None:
    """Write a little-endian PFM (negative scale), rows bottom to top."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        kind = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        kind = b"PF"
    else:
        raise ParseError(f"PFM stores 1 or 3 channels, got shape {data.shape}", 0, path)
    height, width = data.shape[:2]
    with open(path, "wb") as f:
        f.write(kind + b"\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_depth(path: str) -> DepthMap:
    """Depth from a PFM; non-positive pixels are marked invalid."""
    values = read_pfm(path)
    if values.ndim != 2:
        raise ParseError("depth PFM must have one channel", 0, path)
    values = values.astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ParseError("depth PFM contains non-finite values", 0, path)
    return DepthMap(values)


def write_depth(path: str, depth: DepthMap) -> None:
    write_pfm(path, np.where(depth.valid, depth.values, 0.0))


def read_flo(path: str) -> FlowField:
    """
    Read a Middlebury .flo file.

    Args:
        path: Path to the file

    Returns:
        FlowField: displacements with components above 1e9 marked invalid
    """
    buffer = _read_bytes(path)
    if len(buffer) < 12:
        raise ParseError("truncated .flo header", len(buffer), path)
    magic = float(np.frombuffer(buffer, dtype="<f4", count=1, offset=0)[0])
    if magic != FLO_MAGIC:
        raise ParseError(f"bad .flo magic {magic}", 0, path)
    width, height = (int(value) for value in np.frombuffer(buffer, dtype="<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise ParseError(f"bad .flo dimensions {width}x{height}", 4, path)
    expected = width * height * 2 * 4
    if len(buffer) - 12 < expected:
        raise ParseError(
            f"expected {expected} bytes of flow data, found {len(buffer) - 12}", len(buffer), path
        )
    data = np.frombuffer(buffer, dtype="<f4", count=width * height * 2, offset=12)
    data = data.reshape(height, width, 2).astype(np.float64)
    valid = np.all(np.isfinite(data) & (np.abs(data) < FLO_UNKNOWN_THRESHOLD), axis=-1)
    data[~valid] = 0.0
    return FlowField.from_stacked(data, valid)


def write_flo(path: str, flow: FlowField) -> None:
    data = flow.stacked().astype(np.float32)
    data[~flow.valid] = FLO_UNKNOWN
    height, width = flow.shape
    with open(path, "wb") as f:
        f.write(np.array([FLO_MAGIC], dtype="<f4").tobytes())
        f.write(np.array([width, height], dtype="<i4").tobytes())
        f.write(data.astype("<f4").tobytes())


def read_image(path: str) -> ImagePlane:
    """8-bit (or 16-bit) PGM/PPM normalized to [0, 1]."""
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode in ("I;16", "I;16B", "I"):
                return ImagePlane(np.asarray(image, dtype=np.float64) / 65535.0)
            if image.mode not in ("L", "RGB"):
                image = image.convert("RGB")
            return ImagePlane(np.asarray(image, dtype=np.float64) / 255.0)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ParseError(f"cannot decode image: {e}", 0, path) from e


def quantize(img: ImagePlane) -> np.ndarray:
    """Intensities rounded to 8 bits."""
    return np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path: str, img: ImagePlane) -> None:
    """PGM for one channel, PPM for three."""
    data = quantize(img)
    if img.channels == 1:
        image = Image.fromarray(data[..., 0])
    elif img.channels == 3:
        image = Image.fromarray(data)
    else:
        raise ParseError(f"cannot store a {img.channels}-channel image as PGM/PPM", 0, path)
    image.save(path, format="PPM")


def read_mask(path: str) -> np.ndarray:
    """Boolean mask from a PGM, set where the value is above mid-gray."""
    return read_image(path).gray() > 0.5


def write_mask(path: str, mask: np.ndarray) -> None:
    write_image(path, ImagePlane(np.asarray(mask, dtype=np.float64)))


def read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise ParseError(f"cannot read file: {e}", 0, path) from e
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", e.pos, path) from e


def write_json(path: str, data: Any) -> None:
    """Sorted keys and a trailing newline so repeated runs produce identical bytes."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def write_feature_pyramid(directory: str, pyramid: FeaturePyramid) -> list[str]:
    """One PFM per channel under ``level_<l>/channel_<ccc>.pfm``; returns the written paths."""
    written = []
    for level, plane in zip(pyramid.level_indices, pyramid.levels):
        level_dir = os.path.join(directory, f"level_{level}")
        os.makedirs(level_dir, exist_ok=True)
        for channel in range(plane.channels):
            path = os.path.join(level_dir, f"channel_{channel:03d}.pfm")
            write_pfm(path, plane.channel(channel))
            written.append(path)
    logger.debug("Wrote %d feature maps to %s", len(written), directory)
    return written


def read_labels(path: str) -> np.ndarray:
    """Integer label map stored as raw 8-bit PGM values."""
    try:
        with Image.open(path) as image:
            if image.mode != "L":
                raise ParseError(f"label map must be 8-bit grayscale, got mode {image.mode}", 0, path)
            return np.asarray(image, dtype=np.int64)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ParseError(f"cannot decode label map: {e}", 0, path) from e


def write_labels(path: str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ParseError("label values must lie in [0, 255]", 0, path)
    Image.fromarray(labels.astype(np.uint8)).save(path, format="PPM")
