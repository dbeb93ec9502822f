"""Scene bundles, manifests and provenance records."""

from __future__ import annotations

import json

import numpy as np
import pytest

from depthsup.core.errors import ConfigError, ParseError
from depthsup.core.experiment import (
    ExperimentManifest,
    build_provenance,
    load_bundle,
    load_scene,
    provenance_path,
    save_scene,
    scene_frames,
    supervision_flows,
    write_provenance,
)
from depthsup.core.fileio import quantize, write_json
from depthsup.core.synth import preset_scene

from conftest import SMALL_SHAPE


# ── Scene bundles ────────────────────────────────────────────────────────

class TestBundles:

    def test_save_and_load(self, two_plane_scene, tmp_path):
        manifest = save_scene(two_plane_scene, str(tmp_path / "scene"))
        loaded = load_bundle(manifest)
        assert loaded.spec.name == "two_plane"
        np.testing.assert_allclose(loaded.depth.values, two_plane_scene.depth.values, rtol=1e-6)
        np.testing.assert_array_equal(loaded.segments, two_plane_scene.segments)
        np.testing.assert_array_equal(loaded.textured, two_plane_scene.textured)
        np.testing.assert_array_equal(quantize(loaded.target), quantize(two_plane_scene.target))
        view, original = loaded.views[0], two_plane_scene.views[0]
        np.testing.assert_allclose(view.pose.matrix, original.pose.matrix, atol=1e-9)
        np.testing.assert_array_equal(view.occlusion, original.occlusion)
        np.testing.assert_array_equal(view.flow.valid, original.flow.valid)

    def test_missing_bundle_file(self, plane_scene, tmp_path):
        manifest = save_scene(plane_scene, str(tmp_path))
        (tmp_path / "depth.pfm").unlink()
        with pytest.raises(ConfigError):
            load_bundle(manifest)

    def test_not_a_bundle(self, tmp_path):
        path = tmp_path / "other.json"
        write_json(str(path), {"format": "something-else"})
        with pytest.raises(ParseError):
            load_bundle(str(path))

    def test_load_scene_renders_a_spec(self, tmp_path):
        path = tmp_path / "spec.json"
        write_json(str(path), preset_scene("plane", *SMALL_SHAPE).to_dict())
        scene = load_scene(str(path))
        np.testing.assert_allclose(scene.depth.values, 3.0, rtol=1e-12)

    def test_load_scene_rejects_non_objects(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ParseError):
            load_scene(str(path))

    def test_frames_and_supervision(self, two_plane_scene):
        frames = scene_frames(two_plane_scene)
        assert len(frames.sources) == 1
        flows = supervision_flows(two_plane_scene)
        view = two_plane_scene.views[0]
        np.testing.assert_array_equal(flows[0].valid, view.flow.valid & view.visible)


# ── Experiment manifests ────────────────────────────────────────────────

class TestManifest:

    def test_relative_scene_path_is_resolved(self, tmp_path):
        (tmp_path / "scene.json").write_text("{}")
        path = tmp_path / "run.json"
        write_json(str(path), {"scene": "scene.json", "seed": 7, "optimizer_config": {"iterations": 3}})
        manifest = ExperimentManifest.load(str(path))
        assert manifest.scene == str(tmp_path / "scene.json")
        assert manifest.seed == 7
        assert manifest.optimizer_config == {"iterations": 3}

    def test_missing_scene_field(self):
        with pytest.raises(ConfigError):
            ExperimentManifest.from_dict({"seed": 1})

    def test_nonexistent_scene(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentManifest.from_dict({"scene": "nope.json"}, str(tmp_path))

    def test_bad_scene_type(self):
        with pytest.raises(ConfigError):
            ExperimentManifest.from_dict({"scene": 3})

    def test_inline_scene(self):
        spec = preset_scene("plane", 16, 24).to_dict()
        manifest = ExperimentManifest.from_dict({"scene": spec})
        assert manifest.load_scene().depth.shape == (16, 24)

    def test_save_and_load(self, tmp_path):
        manifest = ExperimentManifest({"planes": []}, {"planar_weight": 0.0}, seed=5)
        path = tmp_path / "m.json"
        manifest.save(str(path))
        assert ExperimentManifest.load(str(path)).to_dict() == manifest.to_dict()

    def test_manifest_must_be_an_object(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('"scene"')
        with pytest.raises(ParseError):
            ExperimentManifest.load(str(path))


# ── Provenance ───────────────────────────────────────────────────────────

class TestProvenance:

    def test_deterministic_and_without_timestamps(self, tmp_path):
        record = build_provenance("optimize", {"out": "d.pfm", "seed": 1}, {"b": 2, "a": 1}, 1)
        first = write_provenance(str(tmp_path / "d.pfm"), record)
        content = (tmp_path / "d.pfm.provenance.json").read_bytes()
        again = build_provenance("optimize", {"seed": 1, "out": "d.pfm"}, {"a": 1, "b": 2}, 1)
        write_provenance(str(tmp_path / "d.pfm"), again)
        assert (tmp_path / "d.pfm.provenance.json").read_bytes() == content
        data = json.loads(content)
        assert first.endswith("d.pfm.provenance.json")
        assert not any("time" in key for key in data)
        assert set(data["versions"]) == {"depthsup", "python", "numpy", "scipy", "pillow"}

    def test_config_md5_ignores_key_order(self):
        a = build_provenance("synth", {}, {"x": 1, "y": [1, 2]}, 0)
        b = build_provenance("synth", {}, {"y": [1, 2], "x": 1}, 0)
        c = build_provenance("synth", {}, {"x": 2, "y": [1, 2]}, 0)
        assert a["config_md5"] == b["config_md5"] != c["config_md5"]

    def test_path_for_directory_and_file(self, tmp_path):
        assert provenance_path(str(tmp_path)) == str(tmp_path / "provenance.json")
        assert provenance_path(str(tmp_path / "out.json")) == str(tmp_path / "out.json") + ".provenance.json"
