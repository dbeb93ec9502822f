#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : census transform, DSO-style keypoints and hand-crafted feature pyramids
"""

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.ndimage import gaussian_filter

from depthsup.config import config
from depthsup.core.errors import ConfigError, ImageError
from depthsup.core.imaging import FeaturePyramid, ImagePlane, gradient_magnitude, image_pyramid
from depthsup.core.logger import logger

# 3x3 neighborhood without the center, as (dy, dx), row-major
CENSUS_OFFSETS: tuple[tuple[int, int], ...] = tuple(
    (dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)
)

DOG_SIGMA_RATIO = 1.6


@dataclass(frozen=True)
class KeypointConfig:
    block_size: int
    gradient_offset: float
    patch_radius: int
    max_points: int

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.gradient_offset < 0:
            raise ConfigError(f"gradient_offset must be >= 0, got {self.gradient_offset}")
        if self.patch_radius < 0:
            raise ConfigError(f"patch_radius must be >= 0, got {self.patch_radius}")
        if self.max_points < 1:
            raise ConfigError(f"max_points must be >= 1, got {self.max_points}")

    @classmethod
    def from_config(cls, **overrides: Any) -> "KeypointConfig":
        values = {
            "block_size": config.keypoint_block_size,
            "gradient_offset": config.keypoint_gradient_offset,
            "patch_radius": config.patch_radius,
            "max_points": config.max_keypoints,
        }
        values.update(overrides)
        return cls(**values)


@dataclass(eq=False)
class PatchSet:
    """Keypoints (x, y) and the dilated 3x3 offset grid {-N, 0, N}² around each."""

    keypoints: np.ndarray  # (K, 2) integer (x, y)
    radius: int
    image_shape: tuple[int, int]

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.intp).reshape(-1, 2)
        height, width = self.image_shape
        n = self.radius
        if len(self.keypoints):
            xs, ys = self.keypoints[:, 0], self.keypoints[:, 1]
            if np.any(xs < n) or np.any(xs > width - 1 - n) or np.any(ys < n) or np.any(ys > height - 1 - n):
                raise ImageError("keypoint footprint leaves the image")
            if len(np.unique(self.keypoints, axis=0)) != len(self.keypoints):
                raise ImageError("keypoints are not unique")

    @property
    def offsets(self) -> list[tuple[int, int]]:
        n = self.radius
        return [(dx, dy) for dy in (-n, 0, n) for dx in (-n, 0, n)]

    def __len__(self) -> int:
        return len(self.keypoints)

    def is_empty(self) -> bool:
        return len(self.keypoints) == 0

    def pixels(self) -> np.ndarray:
        """Every patch pixel P_i as (x, y), duplicates kept, shape (9K, 2)."""
        if self.is_empty():
            return np.zeros((0, 2), dtype=np.intp)
        offsets = np.array(self.offsets, dtype=np.intp)
        return (self.keypoints[:, None, :] + offsets[None, :, :]).reshape(-1, 2)

    def weight_map(self) -> np.ndarray:
        """How many patches cover each pixel."""
        weights = np.zeros(self.image_shape)
        pixels = self.pixels()
        np.add.at(weights, (pixels[:, 1], pixels[:, 0]), 1.0)
        return weights

    def to_dict(self) -> dict[str, Any]:
        return {
            "radius": self.radius,
            "image_shape": list(self.image_shape),
            "keypoints": self.keypoints.tolist(),
        }


@dataclass(eq=False)
class CensusMap:
    """Ternary codes in {-1, 0, +1} for the 8 neighbors; border pixels flagged invalid."""

    codes: np.ndarray  # (H, W, 8) int8
    epsilon: float
    valid: np.ndarray  # (H, W) bool


@dataclass(eq=False)
class SoftCensus:
    """Smooth ternary codes t(d) = d / sqrt(d² + ε²) and their slope t'(d)."""

    codes: np.ndarray  # (H, W, 8)
    slopes: np.ndarray  # (H, W, 8)
    valid: np.ndarray  # (H, W)


def _neighbor_stack(gray: np.ndarray) -> np.ndarray:
    """Edge-clamped 8-neighborhood values, shape (H, W, 8)."""
    height, width = gray.shape
    padded = np.pad(gray, 1, mode="edge")
    return np.stack(
        [padded[1 + dy : 1 + dy + height, 1 + dx : 1 + dx + width] for dy, dx in CENSUS_OFFSETS],
        axis=-1,
    )


def interior_mask(shape: tuple[int, int], margin: int = 1) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    height, width = shape
    if height > 2 * margin and width > 2 * margin:
        mask[margin : height - margin, margin : width - margin] = True
    return mask


def census_transform(img: ImagePlane, epsilon: float) -> CensusMap:
    """code_j(p) = sign-with-deadband(I(neighbor_j) − I(p), ε)."""
    if not epsilon > 0:
        raise ConfigError(f"census epsilon must be positive, got {epsilon}")
    gray = img.gray()
    diffs = _neighbor_stack(gray) - gray[..., None]
    codes = np.where(diffs > epsilon, 1, np.where(diffs < -epsilon, -1, 0)).astype(np.int8)
    return CensusMap(codes, epsilon, interior_mask(gray.shape))


def soft_census(gray: np.ndarray, epsilon: float) -> SoftCensus:
    if not epsilon > 0:
        raise ConfigError(f"census epsilon must be positive, got {epsilon}")
    diffs = _neighbor_stack(gray) - gray[..., None]
    root = np.sqrt(diffs**2 + epsilon**2)
    codes = diffs / root
    slopes = epsilon**2 / root**3
    return SoftCensus(codes, slopes, interior_mask(gray.shape))


def census_distance(a, b, offset: float | None = None) -> float | np.ndarray:
    """Soft Hamming distance Σ_j (a_j − b_j)² / ((a_j − b_j)² + offset) over the last axis."""
    offset = config.census_distance_offset if offset is None else offset
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ImageError(f"census code shapes differ: {a.shape} vs {b.shape}")
    squared = (a - b) ** 2
    return (squared / (squared + offset)).sum(axis=-1)


def census_distance_derivative(diff: np.ndarray, offset: float | None = None) -> np.ndarray:
    """d/de of e² / (e² + offset), elementwise."""
    offset = config.census_distance_offset if offset is None else offset
    return 2.0 * diff * offset / (diff**2 + offset) ** 2


def textured_pixels(gray: np.ndarray) -> np.ndarray:
    """Pixels whose value differs from each of their four neighbors; border pixels never qualify."""
    padded = np.pad(np.asarray(gray, dtype=np.float64), 1, mode="edge")
    center = padded[1:-1, 1:-1]
    return (
        (padded[1:-1, 2:] != center)
        & (padded[1:-1, :-2] != center)
        & (padded[2:, 1:-1] != center)
        & (padded[:-2, 1:-1] != center)
    )


def extract_keypoints(
    img: ImagePlane, max_points: int | None = None, options: KeypointConfig | None = None
) -> PatchSet:
    """
    DSO-style gradient selection.

    The image is split into d x d blocks; a block contributes its maximum
    gradient pixel when that magnitude exceeds the block median plus a fixed
    offset. Only pixels that differ from all four neighbors compete, so no
    pixel of a constant region is chosen, including one whose forward
    difference reaches into neighboring texture. Points whose patch
    footprint leaves the image are dropped, then the strongest
    ``max_points`` are kept.
    """
    options = options or KeypointConfig.from_config()
    max_points = options.max_points if max_points is None else max_points
    if max_points < 1:
        raise ConfigError(f"max_points must be >= 1, got {max_points}")
    if img.channels not in (1, 3):
        raise ImageError(f"keypoints need a grayscale or RGB image, got {img.channels} channels")

    gray = img.gray()
    magnitude = np.where(textured_pixels(gray), gradient_magnitude(gray), 0.0)
    height, width = gray.shape
    d = options.block_size
    n = options.patch_radius

    candidates: list[tuple[float, int, int]] = []
    for top in range(0, height, d):
        for left in range(0, width, d):
            block = magnitude[top : top + d, left : left + d]
            threshold = float(np.median(block)) + options.gradient_offset
            flat_index = int(np.argmax(block))
            row, col = divmod(flat_index, block.shape[1])
            value = float(block[row, col])
            if value <= threshold:
                continue
            x, y = left + col, top + row
            if x < n or x > width - 1 - n or y < n or y > height - 1 - n:
                continue
            candidates.append((value, y, x))

    # strongest first, ties broken by raster order
    candidates.sort(key=lambda item: (-item[0], item[1], item[2]))
    selected = candidates[:max_points]
    keypoints = np.array([(x, y) for _, y, x in selected], dtype=np.intp).reshape(-1, 2)
    if not len(keypoints):
        logger.debug("No keypoints above threshold in %dx%d image", height, width)
    return PatchSet(keypoints, n, (height, width))


@dataclass(frozen=True)
class FilterBank:
    """
    Fixed oriented derivative-of-Gaussian and difference-of-Gaussian filters.

    Per sigma the bank holds ``orientations`` first derivatives, the same
    number of second derivatives and one DoG, in that order, sigma-major.
    Derivatives are finite differences of the smoothed image, so they vanish
    exactly on constant input.
    """

    sigmas: tuple[float, ...]
    orientations: int
    angles: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if self.orientations < 1 or not self.sigmas:
            raise ConfigError("filter bank needs at least one sigma and one orientation")
        if any(sigma <= 0 for sigma in self.sigmas):
            raise ConfigError(f"filter bank sigmas must be positive, got {self.sigmas}")
        object.__setattr__(
            self, "angles", tuple(np.pi * k / self.orientations for k in range(self.orientations))
        )

    @classmethod
    def from_config(cls) -> "FilterBank":
        return cls(tuple(config.feature_sigmas), config.feature_orientations)

    @property
    def per_sigma(self) -> int:
        return 2 * self.orientations + 1

    @property
    def size(self) -> int:
        return self.per_sigma * len(self.sigmas)

    def responses(self, gray: np.ndarray, count: int) -> np.ndarray:
        """First ``count`` filter responses of a 2-D image, shape (H, W, count)."""
        if count > self.size:
            raise ConfigError(f"filter bank realizes at most {self.size} channels, {count} requested")
        if count < 1:
            raise ConfigError(f"channel count must be >= 1, got {count}")
        channels: list[np.ndarray] = []
        for sigma in self.sigmas:
            if len(channels) >= count:
                break
            channels.extend(self._sigma_block(gray, sigma))
        return np.stack(channels[:count], axis=-1)

    def _sigma_block(self, gray: np.ndarray, sigma: float) -> list[np.ndarray]:
        smooth = gaussian_filter(gray, sigma, mode="nearest")
        dx, dy, dxx, dyy, dxy = _central_derivatives(smooth)
        block = [sigma * (np.cos(a) * dx + np.sin(a) * dy) for a in self.angles]
        block += [
            sigma**2 * (np.cos(a) ** 2 * dxx + 2.0 * np.sin(a) * np.cos(a) * dxy + np.sin(a) ** 2 * dyy)
            for a in self.angles
        ]
        block.append(smooth - gaussian_filter(gray, DOG_SIGMA_RATIO * sigma, mode="nearest"))
        return block


def _central_derivatives(smooth: np.ndarray):
    padded = np.pad(smooth, 1, mode="edge")
    center = padded[1:-1, 1:-1]
    right, left = padded[1:-1, 2:], padded[1:-1, :-2]
    down, up = padded[2:, 1:-1], padded[:-2, 1:-1]
    dx = 0.5 * (right - left)
    dy = 0.5 * (down - up)
    dxx = (right - center) + (left - center)
    dyy = (down - center) + (up - center)
    padded_dx = np.pad(dx, 1, mode="edge")
    dxy = 0.5 * (padded_dx[2:, 1:-1] - padded_dx[:-2, 1:-1])
    return dx, dy, dxx, dyy, dxy


@dataclass(frozen=True)
class FeatureConfig:
    levels: tuple[int, ...]
    channels: tuple[int, ...]

    def __post_init__(self):
        if len(self.levels) != len(self.channels):
            raise ConfigError(
                f"{len(self.channels)} channel counts given for {len(self.levels)} levels"
            )
        if list(self.levels) != sorted(set(self.levels)) or (self.levels and self.levels[0] < 0):
            raise ConfigError(f"feature levels must be increasing and non-negative, got {self.levels}")

    @classmethod
    def from_config(cls, **overrides: Any) -> "FeatureConfig":
        values: dict[str, Any] = {
            "levels": tuple(config.feature_levels),
            "channels": tuple(config.feature_channels),
        }
        values.update({key: tuple(value) for key, value in overrides.items()})
        return cls(**values)


def build_feature_pyramid(
    img: ImagePlane,
    channels_per_level: list[int] | tuple[int, ...] | None = None,
    levels: list[int] | tuple[int, ...] | None = None,
    bank: FilterBank | None = None,
) -> FeaturePyramid:
    """Filter-bank responses of the grayscale image at each configured pyramid level."""
    defaults = FeatureConfig.from_config()
    if channels_per_level is None:
        channels_per_level = defaults.channels
    if levels is None:
        levels = defaults.levels if len(defaults.levels) == len(channels_per_level) else tuple(
            range(1, len(channels_per_level) + 1)
        )
    options = FeatureConfig(tuple(levels), tuple(channels_per_level))
    bank = bank or FilterBank.from_config()

    gray = img.to_gray()
    images = image_pyramid(gray, max(options.levels)) if options.levels else [gray]
    planes = [
        ImagePlane(bank.responses(images[level].data[..., 0], count))
        for level, count in zip(options.levels, options.channels)
    ]
    return FeaturePyramid(planes, list(options.levels), gray.shape)
