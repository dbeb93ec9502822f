#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : scene bundles, experiment manifests and provenance records
"""

import os
from dataclasses import dataclass, field
from typing import Any

from depthsup.config import config
from depthsup.core.errors import ConfigError, ParseError
from depthsup.core.fileio import (
    read_depth,
    read_flo,
    read_image,
    read_json,
    read_labels,
    read_mask,
    write_depth,
    write_flo,
    write_image,
    write_json,
    write_labels,
    write_mask,
)
from depthsup.core.geometry import FlowField, PoseSE3
from depthsup.core.logger import logger
from depthsup.core.optimizer import Frames
from depthsup.core.synth import RenderedScene, RenderedView, SceneSpec, render
from depthsup.core.utils import create_directory, get_config_md5, get_versions

MANIFEST_NAME = "manifest.json"
PROVENANCE_NAME = "provenance.json"
BUNDLE_FORMAT = "depthsup-scene-1"


def save_scene(scene: RenderedScene, directory: str) -> str:
    """
    Write a rendered scene as PGM/PFM/.flo files plus a manifest.

    Args:
        scene: Rendered scene
        directory: Output directory, created if missing

    Returns:
        str: Path of the written manifest
    """
    if not create_directory(directory):
        raise ConfigError(f"cannot create output directory {directory}")

    files: dict[str, Any] = {
        "target": "target.pgm",
        "depth": "depth.pfm",
        "segments": "segments.pgm",
        "textured": "textured.pgm",
    }
    write_image(os.path.join(directory, files["target"]), scene.target)
    write_depth(os.path.join(directory, files["depth"]), scene.depth)
    write_labels(os.path.join(directory, files["segments"]), scene.segments)
    write_mask(os.path.join(directory, files["textured"]), scene.textured)

    views = []
    for index, view in enumerate(scene.views):
        entry = {
            "image": f"source_{index}.pgm",
            "flow": f"flow_{index}.flo",
            "backward_flow": f"flow_backward_{index}.flo",
            "depth": f"source_depth_{index}.pfm",
            "occlusion": f"occlusion_{index}.pgm",
            "out_of_view": f"out_of_view_{index}.pgm",
            "pose": view.pose.to_dict(),
        }
        write_image(os.path.join(directory, entry["image"]), view.image)
        write_flo(os.path.join(directory, entry["flow"]), view.flow)
        write_flo(os.path.join(directory, entry["backward_flow"]), view.backward_flow)
        write_depth(os.path.join(directory, entry["depth"]), view.depth)
        write_mask(os.path.join(directory, entry["occlusion"]), view.occlusion)
        write_mask(os.path.join(directory, entry["out_of_view"]), view.out_of_view)
        views.append(entry)
    files["views"] = views

    manifest_path = os.path.join(directory, MANIFEST_NAME)
    write_json(manifest_path, {"format": BUNDLE_FORMAT, "spec": scene.spec.to_dict(), "files": files})
    logger.info("Scene %s written to %s (%d view(s))", scene.spec.name, directory, len(views))
    return manifest_path


def _bundle_path(directory: str, name: str) -> str:
    path = os.path.join(directory, name)
    if not os.path.isfile(path):
        raise ConfigError(f"bundle file missing: {path}")
    return path


def load_bundle(manifest_path: str) -> RenderedScene:
    """Read a scene written by ``save_scene``; images come back quantized to 8 bits."""
    manifest = read_json(manifest_path)
    if not isinstance(manifest, dict) or manifest.get("format") != BUNDLE_FORMAT:
        raise ParseError("not a scene bundle manifest", 0, manifest_path)
    directory = os.path.dirname(os.path.abspath(manifest_path))
    spec = SceneSpec.from_dict(manifest["spec"])
    files = manifest["files"]

    views = []
    for entry in files["views"]:
        views.append(
            RenderedView(
                image=read_image(_bundle_path(directory, entry["image"])),
                pose=PoseSE3.from_dict(entry["pose"]),
                flow=read_flo(_bundle_path(directory, entry["flow"])),
                backward_flow=read_flo(_bundle_path(directory, entry["backward_flow"])),
                depth=read_depth(_bundle_path(directory, entry["depth"])),
                occlusion=read_mask(_bundle_path(directory, entry["occlusion"])),
                out_of_view=read_mask(_bundle_path(directory, entry["out_of_view"])),
            )
        )
    return RenderedScene(
        spec,
        read_image(_bundle_path(directory, files["target"])),
        read_depth(_bundle_path(directory, files["depth"])),
        views,
        read_labels(_bundle_path(directory, files["segments"])),
        read_mask(_bundle_path(directory, files["textured"])),
    )


def load_scene(path: str) -> RenderedScene:
    """A SceneSpec JSON is rendered in process; a bundle manifest is read from disk."""
    data = read_json(path)
    if isinstance(data, dict) and data.get("format") == BUNDLE_FORMAT:
        return load_bundle(path)
    if not isinstance(data, dict):
        raise ParseError("scene file must hold a JSON object", 0, path)
    return render(SceneSpec.from_dict(data))


def scene_frames(scene: RenderedScene) -> Frames:
    return Frames(scene.target, [view.image for view in scene.views], scene.segments)


def supervision_flows(scene: RenderedScene) -> dict[int, FlowField]:
    """Ground-truth flow of every view restricted to pixels visible in that view."""
    return {index: view.flow.masked(view.visible) for index, view in enumerate(scene.views)}


@dataclass(eq=False)
class ExperimentManifest:
    """Everything needed to rerun an optimization: scene, configs, outputs and seed."""

    scene: str | dict[str, Any]
    loss_config: dict[str, Any] = field(default_factory=dict)
    optimizer_config: dict[str, Any] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "scene": self.scene,
            "loss_config": self.loss_config,
            "optimizer_config": self.optimizer_config,
            "outputs": self.outputs,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str = ".") -> "ExperimentManifest":
        try:
            scene = data["scene"]
        except KeyError as e:
            raise ConfigError(f"manifest missing field {e}") from e
        if isinstance(scene, str):
            scene = scene if os.path.isabs(scene) else os.path.normpath(os.path.join(base_dir, scene))
            if not os.path.isfile(scene):
                raise ConfigError(f"manifest scene does not exist: {scene}")
        elif not isinstance(scene, dict):
            raise ConfigError("manifest scene must be a path or an inline scene spec")
        return cls(
            scene=scene,
            loss_config=dict(data.get("loss_config", {})),
            optimizer_config=dict(data.get("optimizer_config", {})),
            outputs=dict(data.get("outputs", {})),
            seed=int(data.get("seed", config.seed)),
        )

    @classmethod
    def load(cls, path: str) -> "ExperimentManifest":
        data = read_json(path)
        if not isinstance(data, dict):
            raise ParseError("manifest must hold a JSON object", 0, path)
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    def save(self, path: str) -> None:
        write_json(path, self.to_dict())

    def load_scene(self) -> RenderedScene:
        if isinstance(self.scene, dict):
            return render(SceneSpec.from_dict(self.scene))
        return load_scene(self.scene)


def provenance_path(output: str) -> str:
    """``provenance.json`` inside an output directory, else ``<output>.provenance.json``."""
    if os.path.isdir(output):
        return os.path.join(output, PROVENANCE_NAME)
    return f"{output}.provenance.json"


def build_provenance(
    command: str, arguments: dict[str, Any], settings: dict[str, Any], seed: int
) -> dict[str, Any]:
    """Deterministic run record: no timestamps, so reruns write identical bytes."""
    return {
        "command": command,
        "arguments": {key: value for key, value in sorted(arguments.items())},
        "config_md5": get_config_md5(settings),
        "settings": settings,
        "seed": seed,
        "versions": get_versions(config.app_version),
    }


def write_provenance(output: str, record: dict[str, Any]) -> str:
    path = provenance_path(output)
    write_json(path, record)
    logger.debug("Provenance written to %s", path)
    return path
