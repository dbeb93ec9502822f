#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : image buffers, bilinear sampling, inverse warping, pyramids, gradients
"""

from dataclasses import dataclass

import numpy as np

from depthsup.core.errors import ImageError
from depthsup.core.geometry import FlowField, pixel_grid

# ITU-R 601 luma weights
GRAY_WEIGHTS = np.array([0.2989, 0.5870, 0.1140])


@dataclass(eq=False)
class ImagePlane:
    """H x W x C intensities, normalized to [0, 1] at I/O time."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ImageError(f"image must be H x W x C with positive sizes, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ImageError("image contains non-finite values")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def channel(self, index: int) -> np.ndarray:
        return self.data[..., index]

    def to_gray(self) -> "ImagePlane":
        if self.channels == 1:
            return self
        if self.channels == 3:
            return ImagePlane(self.data @ GRAY_WEIGHTS)
        return ImagePlane(self.data.mean(axis=-1))

    def gray(self) -> np.ndarray:
        """Grayscale intensities as an H x W array."""
        return self.to_gray().data[..., 0]

    def shifted(self, offset: float) -> "ImagePlane":
        return ImagePlane(self.data + offset)


@dataclass(eq=False)
class FeaturePyramid:
    """Feature maps per pyramid level; level ℓ has size (H // 2^ℓ, W // 2^ℓ)."""

    levels: list[ImagePlane]
    level_indices: list[int]
    base_shape: tuple[int, int]

    def __post_init__(self):
        if len(self.levels) != len(self.level_indices):
            raise ImageError("feature pyramid levels and level indices differ in length")
        for plane, index in zip(self.levels, self.level_indices):
            expected = level_shape(self.base_shape, index)
            if plane.shape != expected:
                raise ImageError(f"level {index} has shape {plane.shape}, expected {expected}")

    @property
    def channels(self) -> list[int]:
        return [plane.channels for plane in self.levels]

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(eq=False)
class SampleResult:
    values: np.ndarray  # (..., C)
    valid: np.ndarray  # (...)
    dx: np.ndarray | None = None  # (..., C)
    dy: np.ndarray | None = None  # (..., C)


def level_shape(shape: tuple[int, int], level: int) -> tuple[int, int]:
    height, width = shape
    for _ in range(level):
        height, width = height // 2, width // 2
    return height, width


def sample_bilinear(
    data: np.ndarray, xs: np.ndarray, ys: np.ndarray, with_gradient: bool = False
) -> SampleResult:
    """
    Bilinear interpolation of an H x W x C array at continuous coordinates.

    A sample is valid only when all four neighbors carrying weight lie inside
    the image, i.e. 0 <= x <= W-1 and 0 <= y <= H-1. Invalid samples read 0.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[..., None]
    height, width, channels = data.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    out_shape = xs.shape + (channels,)

    if height < 2 or width < 2:
        zeros = np.zeros(out_shape)
        return SampleResult(
            zeros, np.zeros(xs.shape, dtype=bool),
            zeros.copy() if with_gradient else None,
            zeros.copy() if with_gradient else None,
        )

    valid = (
        np.isfinite(xs) & np.isfinite(ys)
        & (xs >= 0) & (xs <= width - 1) & (ys >= 0) & (ys <= height - 1)
    )
    x = np.where(valid, xs, 0.0)
    y = np.where(valid, ys, 0.0)
    x0 = np.minimum(np.floor(x), width - 2).astype(np.intp)
    y0 = np.minimum(np.floor(y), height - 2).astype(np.intp)
    ax = (x - x0)[..., None]
    ay = (y - y0)[..., None]

    i00 = data[y0, x0]
    i01 = data[y0, x0 + 1]
    i10 = data[y0 + 1, x0]
    i11 = data[y0 + 1, x0 + 1]

    top = (1.0 - ax) * i00 + ax * i01
    bottom = (1.0 - ax) * i10 + ax * i11
    values = (1.0 - ay) * top + ay * bottom
    invalid = ~valid
    values[invalid] = 0.0

    if not with_gradient:
        return SampleResult(values, valid)

    dx = (1.0 - ay) * (i01 - i00) + ay * (i11 - i10)
    dy = (1.0 - ax) * (i10 - i00) + ax * (i11 - i01)
    dx[invalid] = 0.0
    dy[invalid] = 0.0
    return SampleResult(values, valid, dx, dy)


def bilinear_sample(img: ImagePlane, q) -> tuple[np.ndarray, bool]:
    """Intensity vector at one continuous coordinate q = (x, y) and its validity."""
    result = sample_bilinear(img.data, np.array([float(q[0])]), np.array([float(q[1])]))
    return result.values[0], bool(result.valid[0])


def inverse_warp(img: ImagePlane, flow: FlowField) -> tuple[ImagePlane, np.ndarray]:
    """output(p) = img(p − flow(p)); mask is False where sampling is invalid or flow is invalid."""
    if flow.shape != img.shape:
        raise ImageError(f"flow {flow.shape} does not match image {img.shape}")
    xs, ys = pixel_grid(img.height, img.width)
    result = sample_bilinear(img.data, xs - flow.u, ys - flow.v)
    mask = result.valid & flow.valid
    return ImagePlane(result.values), mask


def synthesize_view(other: ImagePlane, flow: FlowField) -> tuple[ImagePlane, np.ndarray]:
    """Reconstruct the reference view from ``other`` along f_{ref→other}: Î(p) = other(p + f(p))."""
    return inverse_warp(other, flow.negated())


def synthesize_with_gradient(data: np.ndarray, flow: FlowField) -> SampleResult:
    """Like ``synthesize_view`` on a raw H x W x C array, returning ∂Î/∂u and ∂Î/∂v as well."""
    height, width = flow.shape
    xs, ys = pixel_grid(height, width)
    result = sample_bilinear(data, xs + flow.u, ys + flow.v, with_gradient=True)
    result.valid &= flow.valid
    return result


def area_downsample(data: np.ndarray) -> np.ndarray:
    """2 x 2 area average, odd trailing row/column dropped."""
    height, width = data.shape[0] // 2, data.shape[1] // 2
    cropped = data[: 2 * height, : 2 * width]
    return 0.25 * (
        cropped[0::2, 0::2] + cropped[0::2, 1::2] + cropped[1::2, 0::2] + cropped[1::2, 1::2]
    )


def area_downsample_adjoint(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of ``area_downsample`` back to an array of ``shape`` (H, W, ...)."""
    out = np.zeros(tuple(shape) + grad.shape[2:])
    height, width = grad.shape[0], grad.shape[1]
    spread = 0.25 * grad
    out[0 : 2 * height : 2, 0 : 2 * width : 2] = spread
    out[0 : 2 * height : 2, 1 : 2 * width : 2] = spread
    out[1 : 2 * height : 2, 0 : 2 * width : 2] = spread
    out[1 : 2 * height : 2, 1 : 2 * width : 2] = spread
    return out


def _downsample_mask(mask: np.ndarray) -> np.ndarray:
    height, width = mask.shape[0] // 2, mask.shape[1] // 2
    cropped = mask[: 2 * height, : 2 * width]
    return cropped[0::2, 0::2] & cropped[0::2, 1::2] & cropped[1::2, 0::2] & cropped[1::2, 1::2]


def downsample_image(img: ImagePlane) -> ImagePlane:
    if img.height < 2 or img.width < 2:
        raise ImageError(f"cannot downsample a {img.height}x{img.width} image")
    return ImagePlane(area_downsample(img.data))


def image_pyramid(img: ImagePlane, levels: int) -> list[ImagePlane]:
    """Images for levels 0..levels by repeated 2 x 2 area averaging."""
    pyramid = [img]
    for _ in range(levels):
        pyramid.append(downsample_image(pyramid[-1]))
    return pyramid


def downsample_flow(flow: FlowField, levels: int) -> list[FlowField]:
    """
    Flow for levels 0..levels; level ℓ is area-downsampled ℓ times and its
    displacements scaled by 2^-ℓ. A coarse pixel is valid only if all four
    finer pixels are.
    """
    if levels < 1:
        raise ImageError(f"levels must be >= 1, got {levels}")
    pyramid = [flow]
    for _ in range(levels):
        finer = pyramid[-1]
        if finer.shape[0] < 2 or finer.shape[1] < 2:
            raise ImageError(f"cannot downsample a {finer.shape} flow field")
        pyramid.append(
            FlowField(
                0.5 * area_downsample(finer.u),
                0.5 * area_downsample(finer.v),
                _downsample_mask(finer.valid),
            )
        )
    return pyramid


def downsample_flow_adjoint(
    grad_u: np.ndarray, grad_v: np.ndarray, level: int, base_shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Pull a gradient w.r.t. the level-ℓ flow back to the level-0 grid."""
    shapes = [level_shape(base_shape, index) for index in range(level + 1)]
    for index in range(level, 0, -1):
        grad_u = 0.5 * area_downsample_adjoint(grad_u, shapes[index - 1])
        grad_v = 0.5 * area_downsample_adjoint(grad_v, shapes[index - 1])
    return grad_u, grad_v


def forward_differences(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along x and y with the last column / row zero."""
    dx = np.zeros_like(data)
    dy = np.zeros_like(data)
    dx[:, :-1] = data[:, 1:] - data[:, :-1]
    dy[:-1, :] = data[1:, :] - data[:-1, :]
    return dx, dy


def image_gradients(img: ImagePlane) -> tuple[ImagePlane, ImagePlane]:
    """Forward-difference ∂x, ∂y per channel; last column / row zero-padded."""
    if img.height < 2 or img.width < 2:
        raise ImageError(f"gradients need at least 2x2 pixels, got {img.height}x{img.width}")
    dx, dy = forward_differences(img.data)
    return ImagePlane(dx), ImagePlane(dy)


def gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    """|∇I| from forward differences of a single-channel H x W array."""
    dx, dy = forward_differences(np.asarray(gray, dtype=np.float64))
    return np.sqrt(dx**2 + dy**2)
