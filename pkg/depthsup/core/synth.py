#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : synthetic planar scenes with analytic depth, flow and occlusion

World coordinates are the target camera frame. A scene lists planes
n·X = c (optionally bounded in X/Y) and the placement of every source
camera in that frame. The relative pose T_{t→s} consumed by rigid flow is
the inverse of a camera placement.
"""

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from depthsup.config import config
from depthsup.core.errors import ConfigError, SceneError
from depthsup.core.geometry import CameraIntrinsics, DepthMap, FlowField, PoseSE3, pixel_grid
from depthsup.core.imaging import ImagePlane
from depthsup.core.logger import logger

PATTERNS = ("flat", "checker", "noise")

NOISE_OCTAVES = 4
NOISE_LATTICE = 64
# camera closer than this to a plane counts as lying on it
PLANE_CLEARANCE = 1e-6
# relative depth tolerance of the visibility test
VISIBILITY_TOLERANCE = 1e-9
# slack in pixels when testing whether a projection lands inside the image
BORDER_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PlanarPatch:
    """Plane n·X = offset in target-camera coordinates with a procedural albedo."""

    normal: tuple[float, float, float]
    offset: float
    pattern: str = "noise"
    albedo: float = 0.5
    amplitude: float = 0.3
    frequency: float = 4.0  # cycles per meter
    bounds: tuple[float, float, float, float] | None = None  # x_min, x_max, y_min, y_max

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(normal))
        if not norm > 0:
            raise SceneError("plane normal must be non-zero")
        if self.pattern not in PATTERNS:
            raise SceneError(f"unknown pattern {self.pattern!r}, expected one of {PATTERNS}")
        if not 0 <= self.albedo <= 1 or self.amplitude < 0 or not self.frequency > 0:
            raise SceneError(
                f"invalid texture (albedo={self.albedo}, amplitude={self.amplitude}, frequency={self.frequency})"
            )
        if self.bounds is not None:
            x_min, x_max, y_min, y_max = (float(value) for value in self.bounds)
            if not (x_min < x_max and y_min < y_max):
                raise SceneError(f"empty plane bounds {self.bounds}")
            object.__setattr__(self, "bounds", (x_min, x_max, y_min, y_max))
        object.__setattr__(self, "normal", tuple(float(value) for value in normal / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @property
    def normal_vector(self) -> np.ndarray:
        return np.array(self.normal)

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Two orthonormal in-plane directions used as texture coordinates."""
        normal = self.normal_vector
        helper = np.array([0.0, 1.0, 0.0]) if abs(normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        first = np.cross(helper, normal)
        first /= np.linalg.norm(first)
        return first, np.cross(normal, first)

    def to_dict(self) -> dict[str, Any]:
        return {
            "normal": list(self.normal),
            "offset": self.offset,
            "pattern": self.pattern,
            "albedo": self.albedo,
            "amplitude": self.amplitude,
            "frequency": self.frequency,
            "bounds": list(self.bounds) if self.bounds is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PlanarPatch":
        try:
            bounds = data.get("bounds")
            return cls(
                normal=tuple(data["normal"]),
                offset=float(data["offset"]),
                pattern=data.get("pattern", "noise"),
                albedo=float(data.get("albedo", 0.5)),
                amplitude=float(data.get("amplitude", 0.3)),
                frequency=float(data.get("frequency", 4.0)),
                bounds=tuple(bounds) if bounds is not None else None,
            )
        except KeyError as e:
            raise SceneError(f"plane missing field {e}") from e


@dataclass(eq=False)
class SceneSpec:
    planes: list[PlanarPatch]
    K: CameraIntrinsics
    camera_poses: list[PoseSE3]
    noise_sigma: float = 0.0
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if not self.planes:
            raise SceneError("scene has no planes")
        if not self.camera_poses:
            raise SceneError("scene needs at least one source camera")
        if self.noise_sigma < 0:
            raise SceneError(f"noise sigma must be >= 0, got {self.noise_sigma}")

    @property
    def pose(self) -> PoseSE3:
        """Placement of the first source camera."""
        return self.camera_poses[0]

    def relative_poses(self) -> list[PoseSE3]:
        """T_{t→s} per source view, mapping target-camera points into the source camera."""
        return [pose.inverse() for pose in self.camera_poses]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "intrinsics": self.K.to_dict(),
            "camera_poses": [pose.to_dict() for pose in self.camera_poses],
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "planes": [plane.to_dict() for plane in self.planes],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SceneSpec":
        try:
            if "intrinsics" in data:
                K = CameraIntrinsics.from_dict(data["intrinsics"])
            else:
                K = default_intrinsics(
                    int(data.get("height", config.image_height)), int(data.get("width", config.image_width))
                )
            if "camera_poses" in data:
                poses = [PoseSE3.from_dict(item) for item in data["camera_poses"]]
            else:
                poses = [PoseSE3.from_dict(data["camera_pose"])]
            return cls(
                planes=[PlanarPatch.from_dict(item) for item in data["planes"]],
                K=K,
                camera_poses=poses,
                noise_sigma=float(data.get("noise_sigma", 0.0)),
                seed=int(data.get("seed", 0)),
                name=str(data.get("name", "custom")),
            )
        except KeyError as e:
            raise SceneError(f"scene spec missing field {e}") from e
        except ConfigError as e:
            raise SceneError(str(e)) from e


@dataclass(eq=False)
class RenderedView:
    image: ImagePlane
    pose: PoseSE3  # T_{t→s}
    flow: FlowField  # target grid, target → source
    backward_flow: FlowField  # source grid, source → target
    depth: DepthMap  # source-camera depth
    occlusion: np.ndarray  # target pixels hidden behind another surface in the source
    out_of_view: np.ndarray  # target pixels projecting outside the source image

    @property
    def visible(self) -> np.ndarray:
        return ~(self.occlusion | self.out_of_view)


@dataclass(eq=False)
class RenderedScene:
    spec: SceneSpec
    target: ImagePlane
    depth: DepthMap
    views: list[RenderedView]
    segments: np.ndarray  # plane index + 1 per target pixel
    textured: np.ndarray  # target pixels on a non-flat pattern

    @property
    def I_t(self) -> ImagePlane:
        return self.target

    @property
    def I_s(self) -> ImagePlane:
        return self.views[0].image

    @property
    def D_t(self) -> DepthMap:
        return self.depth

    @property
    def flow(self) -> FlowField:
        return self.views[0].flow

    @property
    def occlusion(self) -> np.ndarray:
        return self.views[0].occlusion

    @property
    def mean_depth(self) -> float:
        return float(self.depth.values.mean())

    def as_tuple(self) -> tuple[ImagePlane, ImagePlane, DepthMap, FlowField, np.ndarray]:
        return self.I_t, self.I_s, self.D_t, self.flow, self.occlusion


def default_intrinsics(height: int | None = None, width: int | None = None) -> CameraIntrinsics:
    """Pinhole camera with a roughly 63 degree horizontal field of view."""
    height = config.image_height if height is None else height
    width = config.image_width if width is None else width
    focal = 0.8125 * width
    return CameraIntrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def _camera_rays(K: CameraIntrinsics, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)


def _cast(
    planes: list[PlanarPatch], origin: np.ndarray, directions: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest positive ray parameter and plane index along origin + λ·direction (inf / -1 on a miss)."""
    nearest = np.full(directions.shape[:-1], np.inf)
    labels = np.full(directions.shape[:-1], -1, dtype=np.int64)
    for index, plane in enumerate(planes):
        normal = plane.normal_vector
        numerator = plane.offset - float(normal @ origin)
        if abs(numerator) < PLANE_CLEARANCE:
            raise SceneError(f"camera at {origin.tolist()} lies on plane {index}")
        denominator = directions @ normal
        safe = np.where(denominator != 0, denominator, 1.0)
        lam = np.where(denominator != 0, numerator / safe, np.inf)
        hit = lam > 0
        if plane.bounds is not None:
            x_min, x_max, y_min, y_max = plane.bounds
            points = origin + np.where(hit, lam, 0.0)[..., None] * directions
            hit &= (points[..., 0] >= x_min) & (points[..., 0] <= x_max)
            hit &= (points[..., 1] >= y_min) & (points[..., 1] <= y_max)
        closer = hit & (lam < nearest)
        nearest = np.where(closer, lam, nearest)
        labels = np.where(closer, index, labels)
    return nearest, labels


def _value_noise(s: np.ndarray, t: np.ndarray, frequency: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth value noise in [-1, 1] summed over fixed octaves."""
    table = rng.uniform(-1.0, 1.0, (NOISE_OCTAVES, NOISE_LATTICE, NOISE_LATTICE))
    total = np.zeros_like(s)
    norm = 0.0
    amplitude = 1.0
    for octave in range(NOISE_OCTAVES):
        scale = frequency * 2.0**octave
        fs, ft = s * scale, t * scale
        i0, j0 = np.floor(fs), np.floor(ft)
        a, b = fs - i0, ft - j0
        a = a * a * (3.0 - 2.0 * a)
        b = b * b * (3.0 - 2.0 * b)
        i0 = i0.astype(np.int64) % NOISE_LATTICE
        j0 = j0.astype(np.int64) % NOISE_LATTICE
        i1 = (i0 + 1) % NOISE_LATTICE
        j1 = (j0 + 1) % NOISE_LATTICE
        lattice = table[octave]
        top = (1.0 - a) * lattice[j0, i0] + a * lattice[j0, i1]
        bottom = (1.0 - a) * lattice[j1, i0] + a * lattice[j1, i1]
        total += amplitude * ((1.0 - b) * top + b * bottom)
        norm += amplitude
        amplitude *= 0.5
    return total / norm


def _shade(planes: list[PlanarPatch], points: np.ndarray, labels: np.ndarray, seed: int) -> np.ndarray:
    """Albedo at world points; pixels with label -1 stay black."""
    intensity = np.zeros(labels.shape)
    for index, plane in enumerate(planes):
        members = labels == index
        if not np.any(members):
            continue
        first, second = plane.basis()
        s = points[members] @ first
        t = points[members] @ second
        if plane.pattern == "flat":
            values = np.full(s.shape, plane.albedo)
        elif plane.pattern == "checker":
            phase = 2.0 * np.pi * plane.frequency
            values = plane.albedo + plane.amplitude * np.sin(phase * s) * np.sin(phase * t)
        else:
            rng = np.random.default_rng([seed, index])
            values = plane.albedo + plane.amplitude * _value_noise(s, t, plane.frequency, rng)
        intensity[members] = values
    return np.clip(intensity, 0.0, 1.0)


def _plane_flow(
    plane: PlanarPatch, pose: PoseSE3, K: CameraIntrinsics, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flow induced by a plane under T_{t→s} via the homography K (R + t nᵀ / c) K⁻¹."""
    homography = K.matrix @ (pose.rotation + np.outer(pose.translation, plane.normal_vector) / plane.offset) @ K.inverse_matrix
    mapped = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ homography.T
    valid = mapped[..., 2] > 0
    w = np.where(valid, mapped[..., 2], 1.0)
    return mapped[..., 0] / w - xs, mapped[..., 1] / w - ys, valid


def _render_view(
    spec: SceneSpec,
    camera: PoseSE3,
    target_points: np.ndarray,
    target_labels: np.ndarray,
) -> RenderedView:
    K = spec.K
    height, width = K.shape
    xs, ys = pixel_grid(height, width)
    pose = camera.inverse()

    # source image and backward flow by casting from the source camera
    directions = _camera_rays(K, xs, ys) @ camera.rotation.T
    lam, labels = _cast(spec.planes, camera.translation, directions)
    hit = np.isfinite(lam)
    if not np.all(hit):
        logger.warning("%d source pixels see no surface", int((~hit).sum()))
    points = camera.translation + np.where(hit, lam, 0.0)[..., None] * directions
    image = _shade(spec.planes, points, labels, spec.seed)
    target_z = points[..., 2]
    back_valid = hit & (target_z > 0)
    z = np.where(back_valid, target_z, 1.0)
    backward = FlowField(
        np.where(back_valid, K.fx * points[..., 0] / z + K.cx - xs, 0.0),
        np.where(back_valid, K.fy * points[..., 1] / z + K.cy - ys, 0.0),
        back_valid,
    )
    source_depth = DepthMap(np.where(hit, lam, 0.0))

    # forward flow from the plane homographies of the target labels
    u = np.zeros((height, width))
    v = np.zeros((height, width))
    flow_valid = np.zeros((height, width), dtype=bool)
    for index, plane in enumerate(spec.planes):
        members = target_labels == index
        if not np.any(members):
            continue
        plane_u, plane_v, plane_valid = _plane_flow(plane, pose, K, xs, ys)
        u[members] = plane_u[members]
        v[members] = plane_v[members]
        flow_valid[members] = plane_valid[members]
    flow = FlowField(np.where(flow_valid, u, 0.0), np.where(flow_valid, v, 0.0), flow_valid)

    # visibility of target points in the source camera
    source_points = pose.apply(target_points)
    in_front = source_points[..., 2] > 0
    source_z = np.where(in_front, source_points[..., 2], 1.0)
    qx = K.fx * source_points[..., 0] / source_z + K.cx
    qy = K.fy * source_points[..., 1] / source_z + K.cy
    slack = BORDER_TOLERANCE
    out_of_view = ~in_front | (qx < -slack) | (qx > width - 1 + slack) | (qy < -slack) | (qy > height - 1 + slack)
    rays = _camera_rays(K, qx, qy) @ camera.rotation.T
    nearest, _ = _cast(spec.planes, camera.translation, rays)
    occlusion = ~out_of_view & (nearest < source_z * (1.0 - VISIBILITY_TOLERANCE))

    return RenderedView(ImagePlane(image), pose, flow, backward, source_depth, occlusion, out_of_view)


def render(spec: SceneSpec) -> RenderedScene:
    """
    Ray-cast the scene from the target camera and every source camera.

    Depth, forward and backward flow and occlusion are analytic; the forward
    flow comes from per-plane homographies, independently of the rigid-flow
    code. Gaussian noise of ``spec.noise_sigma`` is added after rendering and
    the images are clipped to [0, 1].
    """
    K = spec.K
    height, width = K.shape
    xs, ys = pixel_grid(height, width)
    rays = _camera_rays(K, xs, ys)
    lam, labels = _cast(spec.planes, np.zeros(3), rays)
    if not np.all(np.isfinite(lam)):
        row, col = np.argwhere(~np.isfinite(lam))[0]
        raise SceneError(f"target pixel ({col}, {row}) sees no surface")
    points = lam[..., None] * rays
    target = _shade(spec.planes, points, labels, spec.seed)
    views = [_render_view(spec, camera, points, labels) for camera in spec.camera_poses]

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        target = np.clip(target + rng.normal(0.0, spec.noise_sigma, target.shape), 0.0, 1.0)
        for view in views:
            noisy = view.image.data + rng.normal(0.0, spec.noise_sigma, view.image.data.shape)
            view.image = ImagePlane(np.clip(noisy, 0.0, 1.0))

    flat = np.array([plane.pattern == "flat" for plane in spec.planes])
    logger.debug(
        "Rendered scene %s: %dx%d, %d planes, %d views", spec.name, height, width, len(spec.planes), len(views)
    )
    return RenderedScene(
        spec,
        ImagePlane(target),
        DepthMap(lam),
        views,
        labels + 1,
        ~flat[labels],
    )


def _camera(axis_angle, translation) -> list[PoseSE3]:
    return [PoseSE3.from_axis_angle(axis_angle, translation)]


def _plane_preset(K: CameraIntrinsics, seed: int) -> SceneSpec:
    return SceneSpec(
        [PlanarPatch((0.0, 0.0, 1.0), 3.0, "noise", 0.5, 0.35, 3.0)],
        K, _camera((0.0, 0.0, 0.0), (0.1, 0.0, 0.0)), seed=seed, name="plane",
    )


def _two_plane_preset(K: CameraIntrinsics, seed: int) -> SceneSpec:
    return SceneSpec(
        [
            PlanarPatch((0.0, 0.0, 1.0), 4.0, "noise", 0.5, 0.35, 2.5),
            PlanarPatch((0.0, 1.0, 0.0), 1.0, "noise", 0.45, 0.3, 3.0),
        ],
        K, _camera((0.0, 0.01, 0.0), (0.15, 0.02, 0.05)), seed=seed, name="two_plane",
    )


def _low_texture_preset(K: CameraIntrinsics, seed: int) -> SceneSpec:
    return SceneSpec(
        [
            PlanarPatch((0.0, 0.0, 1.0), 4.0, "flat", 0.6, 0.0),
            PlanarPatch((0.0, 1.0, 0.0), 1.0, "noise", 0.45, 0.3, 3.0),
            PlanarPatch((0.0, 0.0, 1.0), 3.9, "checker", 0.5, 0.3, 4.0, (-0.8, 0.2, -1.0, -0.2)),
        ],
        K, _camera((0.0, 0.01, 0.0), (0.15, 0.02, 0.05)), seed=seed, name="low_texture",
    )


def _textured_patch_preset(K: CameraIntrinsics, seed: int) -> SceneSpec:
    return SceneSpec(
        [
            PlanarPatch((0.0, 0.0, 1.0), 4.5, "flat", 0.55, 0.0),
            PlanarPatch((0.0, -0.3, 1.0), 2.5, "noise", 0.5, 0.35, 3.0, (-0.6, 0.5, -0.45, 0.4)),
        ],
        K, _camera((0.0, 0.0, 0.0), (0.1, 0.05, 0.0)), seed=seed, name="textured_patch",
    )


def _occlusion_preset(K: CameraIntrinsics, seed: int) -> SceneSpec:
    return SceneSpec(
        [
            PlanarPatch((0.0, 0.0, 1.0), 5.0, "noise", 0.5, 0.35, 2.0),
            PlanarPatch((0.0, 0.0, 1.0), 2.5, "checker", 0.5, 0.3, 5.0, (-0.5, 0.5, -0.5, 0.5)),
        ],
        K, _camera((0.0, 0.0, 0.0), (0.2, 0.0, 0.0)), seed=seed, name="occlusion",
    )


PRESETS: dict[str, Callable[[CameraIntrinsics, int], SceneSpec]] = {
    "plane": _plane_preset,
    "two_plane": _two_plane_preset,
    "low_texture": _low_texture_preset,
    "textured_patch": _textured_patch_preset,
    "occlusion": _occlusion_preset,
}


def preset_scene(name: str, height: int | None = None, width: int | None = None, seed: int = 0) -> SceneSpec:
    """Named test scene at the given size (default: the configured image size)."""
    if name not in PRESETS:
        raise SceneError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return PRESETS[name](default_intrinsics(height, width), seed)


def random_scene_spec(seed: int, height: int | None = None, width: int | None = None) -> SceneSpec:
    """Random textured background plane, up to two bounded foreground planes and a small camera motion."""
    rng = np.random.default_rng(seed)
    K = default_intrinsics(height, width)
    tilt = rng.uniform(-0.2, 0.2, 2)
    planes = [PlanarPatch((tilt[0], tilt[1], 1.0), float(rng.uniform(3.0, 6.0)), "noise", 0.5, 0.3, 2.5)]
    for _ in range(int(rng.integers(0, 3))):
        depth = float(rng.uniform(1.5, 2.8))
        x0, y0 = rng.uniform(-0.6, 0.3, 2)
        size = rng.uniform(0.3, 0.6, 2)
        planes.append(
            PlanarPatch(
                (0.0, 0.0, 1.0), depth, "checker", 0.5, 0.3, float(rng.uniform(3.0, 6.0)),
                (float(x0), float(x0 + size[0]), float(y0), float(y0 + size[1])),
            )
        )
    camera = _camera(rng.uniform(-0.02, 0.02, 3), rng.uniform(-0.2, 0.2, 3))
    return SceneSpec(planes, K, camera, seed=seed, name=f"random_{seed}")


@dataclass
class SceneSummary:
    name: str
    shape: tuple[int, int]
    planes: int
    views: int
    mean_depth: float
    flat_fraction: float
    occluded_fraction: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "shape": list(self.shape),
            "planes": self.planes,
            "views": self.views,
            "mean_depth": self.mean_depth,
            "flat_fraction": self.flat_fraction,
            "occluded_fraction": self.occluded_fraction,
        }


def summarize(scene: RenderedScene) -> SceneSummary:
    return SceneSummary(
        scene.spec.name,
        scene.target.shape,
        len(scene.spec.planes),
        len(scene.views),
        scene.mean_depth,
        float(1.0 - scene.textured.mean()),
        [float((view.occlusion | view.out_of_view).mean()) for view in scene.views],
    )
