"""PFM, .flo, PGM and JSON readers and writers."""

from __future__ import annotations

import numpy as np
import pytest

from depthsup.core.errors import ParseError
from depthsup.core.fileio import (
    FLO_MAGIC,
    read_depth,
    read_flo,
    read_image,
    read_json,
    read_labels,
    read_mask,
    read_pfm,
    write_depth,
    write_feature_pyramid,
    write_flo,
    write_image,
    write_json,
    write_labels,
    write_mask,
    write_pfm,
)
from depthsup.core.features import build_feature_pyramid
from depthsup.core.geometry import DepthMap, FlowField
from depthsup.core.imaging import ImagePlane

from conftest import textured_array


class TestPfm:

    def test_top_row_first_in_memory(self, tmp_path):
        data = np.arange(12, dtype=np.float32).reshape(3, 4)
        path = tmp_path / "a.pfm"
        write_pfm(str(path), data)
        np.testing.assert_array_equal(read_pfm(str(path)), data)
        raw = path.read_bytes()
        assert raw.startswith(b"Pf\n4 3\n-1.0\n")
        # first stored row is the bottom one
        first = np.frombuffer(raw[len(b"Pf\n4 3\n-1.0\n") :], dtype="<f4", count=4)
        np.testing.assert_array_equal(first, data[-1])

    def test_big_endian_file(self, tmp_path):
        data = np.array([[1.5, -2.0], [3.25, 4.0]], dtype=np.float32)
        path = tmp_path / "be.pfm"
        path.write_bytes(b"Pf\n2 2\n1.0\n" + np.flipud(data).astype(">f4").tobytes())
        np.testing.assert_array_equal(read_pfm(str(path)), data)

    def test_three_channels(self, tmp_path):
        data = np.random.default_rng(0).standard_normal((2, 3, 3)).astype(np.float32)
        path = tmp_path / "c.pfm"
        write_pfm(str(path), data)
        np.testing.assert_array_equal(read_pfm(str(path)), data)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"P6\n2 2\n255\n")
        with pytest.raises(ParseError) as info:
            read_pfm(str(path))
        assert info.value.offset == 0

    def test_truncated_data_reports_end_offset(self, tmp_path):
        path = tmp_path / "short.pfm"
        payload = b"Pf\n2 2\n-1.0\n" + b"\x00" * 8
        path.write_bytes(payload)
        with pytest.raises(ParseError) as info:
            read_pfm(str(path))
        assert info.value.offset == len(payload)

    def test_bad_dimensions(self, tmp_path):
        path = tmp_path / "dims.pfm"
        path.write_bytes(b"Pf\nx 2\n-1.0\n")
        with pytest.raises(ParseError) as info:
            read_pfm(str(path))
        assert info.value.offset == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            read_pfm(str(tmp_path / "missing.pfm"))

    def test_depth_zeroes_invalid_pixels(self, tmp_path):
        values = np.array([[1.0, 2.0], [3.0, 4.0]])
        valid = np.array([[True, False], [True, True]])
        path = tmp_path / "d.pfm"
        write_depth(str(path), DepthMap(values, valid))
        depth = read_depth(str(path))
        np.testing.assert_array_equal(depth.valid, valid)
        assert depth.values[0, 1] == 0.0


class TestFlo:

    def test_layout_and_invalid_pixels(self, tmp_path):
        valid = np.array([[True, False, True]])
        flow = FlowField(np.array([[1.0, 2.0, -3.5]]), np.array([[0.5, 0.0, 4.0]]), valid)
        path = tmp_path / "f.flo"
        write_flo(str(path), flow)
        raw = path.read_bytes()
        assert np.frombuffer(raw, "<f4", 1)[0] == np.float32(FLO_MAGIC)
        assert np.frombuffer(raw, "<i4", 2, 4).tolist() == [3, 1]
        loaded = read_flo(str(path))
        np.testing.assert_array_equal(loaded.valid, valid)
        np.testing.assert_array_equal(loaded.u[valid], flow.u[valid])
        assert loaded.u[0, 1] == 0.0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(np.array([1.0, 0, 0], dtype="<f4").tobytes())
        with pytest.raises(ParseError):
            read_flo(str(path))

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.flo"
        payload = np.array([FLO_MAGIC], "<f4").tobytes() + np.array([2, 2], "<i4").tobytes() + b"\x00" * 4
        path.write_bytes(payload)
        with pytest.raises(ParseError) as info:
            read_flo(str(path))
        assert info.value.offset == len(payload)


class TestImages:

    def test_gray_image_is_quantized_to_8_bits(self, tmp_path):
        img = ImagePlane(textured_array(6, 7))
        path = tmp_path / "i.pgm"
        write_image(str(path), img)
        loaded = read_image(str(path))
        assert loaded.channels == 1
        np.testing.assert_allclose(loaded.data, np.round(img.data * 255) / 255, atol=1e-12)
        assert path.read_bytes().startswith(b"P5")

    def test_rgb_image_is_ppm(self, tmp_path):
        img = ImagePlane(np.random.default_rng(1).uniform(size=(4, 5, 3)))
        path = tmp_path / "i.ppm"
        write_image(str(path), img)
        assert path.read_bytes().startswith(b"P6")
        assert read_image(str(path)).channels == 3

    def test_masks(self, tmp_path):
        mask = np.array([[True, False], [False, True]])
        path = tmp_path / "m.pgm"
        write_mask(str(path), mask)
        np.testing.assert_array_equal(read_mask(str(path)), mask)

    def test_labels_keep_raw_values(self, tmp_path):
        labels = np.array([[0, 1, 2], [3, 200, 255]])
        path = tmp_path / "l.pgm"
        write_labels(str(path), labels)
        np.testing.assert_array_equal(read_labels(str(path)), labels)

    def test_labels_out_of_range(self, tmp_path):
        with pytest.raises(ParseError):
            write_labels(str(tmp_path / "l.pgm"), np.array([[256]]))

    def test_undecodable_image(self, tmp_path):
        path = tmp_path / "junk.pgm"
        path.write_bytes(b"not an image")
        with pytest.raises(ParseError):
            read_image(str(path))

    def test_feature_pyramid_dump(self, tmp_path):
        pyramid = build_feature_pyramid(ImagePlane(textured_array(16, 16)), (2, 3), (1, 2))
        written = write_feature_pyramid(str(tmp_path), pyramid)
        assert len(written) == 5
        np.testing.assert_allclose(
            read_pfm(str(tmp_path / "level_2" / "channel_002.pfm")), pyramid.levels[1].channel(2), rtol=1e-6, atol=1e-6
        )


class TestJson:

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_json(str(a), {"b": 1, "a": [1.5, None]})
        write_json(str(b), {"a": [1.5, None], "b": 1})
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().endswith("\n")
        assert read_json(str(a)) == {"a": [1.5, None], "b": 1}

    def test_invalid_json_reports_offset(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"a": 1,, }')
        with pytest.raises(ParseError) as info:
            read_json(str(path))
        assert info.value.offset == 8
