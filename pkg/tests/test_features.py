"""Census transform, keypoint selection and feature pyramids."""

from __future__ import annotations

import numpy as np
import pytest

from depthsup.core.errors import ConfigError, ImageError
from depthsup.core.features import (
    CENSUS_OFFSETS,
    FeatureConfig,
    FilterBank,
    KeypointConfig,
    PatchSet,
    build_feature_pyramid,
    census_distance,
    census_transform,
    extract_keypoints,
    soft_census,
    textured_pixels,
)
from depthsup.core.imaging import ImagePlane, level_shape
from depthsup.core.synth import preset_scene, render

from conftest import SMALL_SHAPE, shifted_pair, textured_array


def _census_by_loops(gray: np.ndarray, epsilon: float) -> np.ndarray:
    height, width = gray.shape
    codes = np.zeros((height, width, 8), dtype=np.int8)
    for y in range(height):
        for x in range(width):
            for j, (dy, dx) in enumerate(CENSUS_OFFSETS):
                ny = min(max(y + dy, 0), height - 1)
                nx = min(max(x + dx, 0), width - 1)
                diff = gray[ny, nx] - gray[y, x]
                codes[y, x, j] = 1 if diff > epsilon else (-1 if diff < -epsilon else 0)
    return codes


class TestCensus:

    def test_codes_of_known_neighborhood(self):
        gray = np.array([[0.50, 0.60, 0.50], [0.40, 0.50, 0.51], [0.50, 0.50, 0.90]])
        census = census_transform(ImagePlane(gray), 0.02)
        codes = dict(zip(CENSUS_OFFSETS, census.codes[1, 1].tolist()))
        assert codes[(-1, 0)] == 1
        assert codes[(0, -1)] == -1
        assert codes[(0, 1)] == 0  # inside the deadband
        assert codes[(1, 1)] == 1
        assert codes[(-1, -1)] == 0

    def test_border_pixels_are_invalid(self):
        census = census_transform(ImagePlane(np.zeros((5, 6))), 0.02)
        assert census.valid.sum() == 3 * 4
        assert not census.valid[0].any() and not census.valid[:, -1].any()

    @pytest.mark.parametrize("seed", range(3))
    def test_codes_match_loop_oracle(self, seed):
        gray = textured_array(12, 15, seed=seed)
        gray[4:8, 5:9] = 0.5  # flat block exercises the deadband
        census = census_transform(ImagePlane(gray), 0.02)
        np.testing.assert_array_equal(census.codes, _census_by_loops(gray, 0.02))

    @pytest.mark.parametrize("du, dv", [(1, 0), (0, 2), (3, 1)])
    def test_codes_follow_an_integer_shift_exactly(self, du, dv):
        I_t, I_s = shifted_pair(du, dv)
        height, width = SMALL_SHAPE
        codes_t = census_transform(I_t, 0.02).codes
        codes_s = census_transform(I_s, 0.02).codes
        np.testing.assert_array_equal(
            codes_t[1 : height - 1 - dv, 1 : width - 1 - du], codes_s[1 + dv : height - 1, 1 + du : width - 1]
        )

    def test_rejects_non_positive_epsilon(self):
        with pytest.raises(ConfigError):
            census_transform(ImagePlane(np.zeros((3, 3))), 0.0)

    def test_soft_codes_invariant_to_brightness_offset(self):
        gray = textured_array(*SMALL_SHAPE)
        base = soft_census(gray, 0.02)
        shifted = soft_census(gray + 0.2, 0.02)
        np.testing.assert_allclose(shifted.codes, base.codes, atol=1e-12)

    def test_soft_codes_approach_hard_codes_off_the_deadband(self):
        gray = np.array([[0.0, 0.0, 0.0], [0.0, 0.5, 1.0], [0.0, 0.0, 0.0]])
        soft = soft_census(gray, 0.02)
        hard = census_transform(ImagePlane(gray), 0.02)
        np.testing.assert_allclose(soft.codes[1, 1], hard.codes[1, 1], atol=1e-3)

    def test_soft_slopes_match_finite_differences(self):
        eps = 0.02
        d = np.linspace(-0.1, 0.1, 21)

        def t(x):
            return x / np.sqrt(x**2 + eps**2)

        h = 1e-7
        gray = np.zeros((3, 3))
        for value in d:
            gray[1, 2] = value
            slope = soft_census(gray, eps).slopes[1, 1, CENSUS_OFFSETS.index((0, 1))]
            assert slope == pytest.approx((t(value + h) - t(value - h)) / (2 * h), rel=1e-5)

    def test_distance_of_identical_codes_is_zero(self):
        codes = soft_census(textured_array(8, 8), 0.02).codes
        assert np.all(census_distance(codes, codes) == 0.0)

    def test_distance_of_opposite_code(self):
        a = np.zeros(8)
        b = np.zeros(8)
        a[0], b[0] = 1.0, -1.0
        assert census_distance(a, b) == pytest.approx(4.0 / (4.0 + 0.81))

    def test_distance_shape_mismatch(self):
        with pytest.raises(ImageError):
            census_distance(np.zeros(8), np.zeros(7))


class TestKeypoints:

    def test_constant_image_has_no_keypoints(self):
        patches = extract_keypoints(ImagePlane(np.full(SMALL_SHAPE, 0.5)))
        assert patches.is_empty()
        assert patches.pixels().shape == (0, 2)

    def test_keypoints_inside_footprint_and_unique(self, textured_image):
        patches = extract_keypoints(textured_image)
        n = patches.radius
        height, width = SMALL_SHAPE
        assert len(patches) > 0
        xs, ys = patches.keypoints[:, 0], patches.keypoints[:, 1]
        assert xs.min() >= n and xs.max() <= width - 1 - n
        assert ys.min() >= n and ys.max() <= height - 1 - n
        assert len(np.unique(patches.keypoints, axis=0)) == len(patches)

    def test_at_most_one_keypoint_per_block(self, textured_image):
        options = KeypointConfig.from_config()
        patches = extract_keypoints(textured_image, options=options)
        blocks = {(x // options.block_size, y // options.block_size) for x, y in patches.keypoints.tolist()}
        assert len(blocks) == len(patches)

    def test_max_points_keeps_the_strongest(self, textured_image):
        all_points = extract_keypoints(textured_image)
        top = extract_keypoints(textured_image, max_points=3)
        assert len(top) == 3
        np.testing.assert_array_equal(top.keypoints, all_points.keypoints[:3])

    def test_selection_is_deterministic(self, textured_image):
        a = extract_keypoints(textured_image)
        b = extract_keypoints(textured_image)
        np.testing.assert_array_equal(a.keypoints, b.keypoints)

    def test_rejects_zero_max_points(self, textured_image):
        with pytest.raises(ConfigError):
            extract_keypoints(textured_image, max_points=0)

    def test_patch_offsets_and_weights(self):
        patches = PatchSet(np.array([[4, 4], [6, 4]]), 2, (10, 12))
        assert len(patches.offsets) == 9
        assert patches.pixels().shape == (18, 2)
        weights = patches.weight_map()
        assert weights.sum() == 18
        assert weights[4, 6] == 2  # shared by both patches

    def test_patch_footprint_leaving_image_raises(self):
        with pytest.raises(ImageError):
            PatchSet(np.array([[1, 5]]), 2, (10, 10))

    def test_single_bright_dot_gives_one_keypoint(self):
        gray = np.zeros((32, 32))
        gray[13, 17] = 1.0
        patches = extract_keypoints(ImagePlane(gray))
        np.testing.assert_array_equal(patches.keypoints, [[17, 13]])

    def test_textured_pixels_exclude_constant_runs(self):
        gray = np.full((6, 8), 0.5)
        gray[:, 5:] = textured_array(6, 3)
        mask = textured_pixels(gray)
        assert not mask[:, :5].any()  # column 4 has a textured right neighbor but a flat left one
        assert not mask[0].any() and not mask[-1].any()

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("name", ["low_texture", "textured_patch"])
    def test_keypoints_avoid_flat_regions(self, name, seed):
        scene = render(preset_scene(name, 96, 128, seed=seed))
        patches = extract_keypoints(scene.target)
        xs, ys = patches.keypoints[:, 0], patches.keypoints[:, 1]
        on_texture = scene.textured[ys, xs]
        assert len(patches) > 10
        assert int((~on_texture).sum()) == 0
        assert on_texture.mean() >= 0.95


class TestFeaturePyramid:

    def test_level_shapes_and_channels(self, textured_image):
        pyramid = build_feature_pyramid(textured_image, (16, 32, 24), (1, 2, 3))
        assert pyramid.level_indices == [1, 2, 3]
        assert pyramid.channels == [16, 32, 24]
        for plane, level in zip(pyramid.levels, pyramid.level_indices):
            assert plane.shape == level_shape(SMALL_SHAPE, level)

    def test_constant_image_gives_zero_features(self):
        pyramid = build_feature_pyramid(ImagePlane(np.full(SMALL_SHAPE, 0.4)), (8, 8), (1, 2))
        for plane in pyramid.levels:
            np.testing.assert_allclose(plane.data, 0.0, atol=1e-12)

    def test_features_respond_to_texture(self, textured_image):
        pyramid = build_feature_pyramid(textured_image, (8,), (1,))
        assert np.abs(pyramid.levels[0].data).max() > 1e-3

    def test_too_many_channels_raises(self, textured_image):
        bank = FilterBank((1.0,), 2)
        with pytest.raises(ConfigError):
            build_feature_pyramid(textured_image, (bank.size + 1,), (1,), bank)

    def test_mismatched_config_raises(self):
        with pytest.raises(ConfigError):
            FeatureConfig((1, 2), (8,))
        with pytest.raises(ConfigError):
            FeatureConfig((2, 1), (8, 8))

    def test_same_image_same_pyramid(self, textured_image):
        a = build_feature_pyramid(textured_image, (8, 8), (1, 2), FilterBank((0.7, 1.0), 4))
        b = build_feature_pyramid(textured_image, (8, 8), (1, 2), FilterBank((0.7, 1.0), 4))
        for first, second in zip(a.levels, b.levels):
            np.testing.assert_array_equal(first.data, second.data)

    def test_features_follow_a_shift_away_from_the_border(self):
        # 8 px at full resolution is a whole number of pixels on levels 1 and 2
        shift = 8
        I_t, I_s = shifted_pair(shift, shift, (96, 128))
        bank = FilterBank((0.7, 1.0), 4)
        channels = (bank.size, bank.size)
        pyramid_t = build_feature_pyramid(I_t, channels, (1, 2), bank)
        pyramid_s = build_feature_pyramid(I_s, channels, (1, 2), bank)
        margin = 9  # truncated Gaussian of the DoG plus the derivative stencils
        for level, plane_t, plane_s in zip((1, 2), pyramid_t.levels, pyramid_s.levels):
            step = shift // 2**level
            height, width = plane_t.shape
            inner_t = plane_t.data[margin : height - margin - step, margin : width - margin - step]
            inner_s = plane_s.data[margin + step : height - margin, margin + step : width - margin]
            np.testing.assert_allclose(inner_t, inner_s, atol=1e-12)
