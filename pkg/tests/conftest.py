"""Shared fixtures: small rendered scenes and textured test images."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from depthsup.core.imaging import ImagePlane
from depthsup.core.synth import RenderedScene, default_intrinsics, preset_scene, render

SMALL_SHAPE = (48, 64)


def textured_array(height: int, width: int, seed: int = 0, sigma: float = 1.5) -> np.ndarray:
    """Smooth random texture in roughly [0.2, 0.8]."""
    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.uniform(size=(height, width)), sigma)
    noise -= noise.min()
    return 0.2 + 0.6 * noise / noise.max()


def shifted_pair(du: int, dv: int, shape: tuple[int, int] = SMALL_SHAPE, seed: int = 0):
    """(I_t, I_s) with I_t(p) = I_s(p + (du, dv)) exactly, for non-negative integer shifts."""
    height, width = shape
    big = textured_array(height + dv, width + du, seed)
    return ImagePlane(big[dv : dv + height, du : du + width]), ImagePlane(big[:height, :width])


def small_scene(name: str, seed: int = 0) -> RenderedScene:
    return render(preset_scene(name, *SMALL_SHAPE, seed=seed))


@pytest.fixture(scope="session")
def small_K():
    return default_intrinsics(*SMALL_SHAPE)


@pytest.fixture(scope="session")
def plane_scene() -> RenderedScene:
    return small_scene("plane")


@pytest.fixture(scope="session")
def two_plane_scene() -> RenderedScene:
    return small_scene("two_plane")


@pytest.fixture(scope="session")
def textured_image() -> ImagePlane:
    return ImagePlane(textured_array(*SMALL_SHAPE))
