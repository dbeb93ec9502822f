#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : loss terms of the flow and depth objectives with analytic gradients

Warp direction: every flow handed to a loss is f_{ref→other}, defined on the
reference grid (the frame whose depth or flow is being estimated). The other
frame is resampled at p + f(p) and compared with the reference at p.
"""

from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

from depthsup.config import config
from depthsup.core.errors import ConfigError, ImageError
from depthsup.core.features import (
    CENSUS_OFFSETS,
    PatchSet,
    census_distance,
    census_distance_derivative,
    soft_census,
)
from depthsup.core.geometry import CameraIntrinsics, DepthMap, FlowField, pixel_grid, pixel_rays
from depthsup.core.imaging import (
    FeaturePyramid,
    ImagePlane,
    downsample_flow,
    downsample_flow_adjoint,
    forward_differences,
    synthesize_with_gradient,
)
from depthsup.core.logger import logger

PATCH_PHOTOMETRIC = "patch_photometric"
SMOOTHNESS = "smoothness"
PLANAR = "planar"
FLOW_CONSISTENCY = "flow_consistency"
FEATURE_SYNTHESIS = "feature_synthesis"

DEPTH_TERMS = (PATCH_PHOTOMETRIC, SMOOTHNESS, PLANAR, FLOW_CONSISTENCY, FEATURE_SYNTHESIS)
FLOW_TERMS = (PATCH_PHOTOMETRIC, SMOOTHNESS)

# short names accepted in JSON loss configs
_ALIASES = {
    "lambda": "flow_smoothness_weight",
    "lambda1": "smoothness_weight",
    "lambda2": "planar_weight",
    "lambda3": "feature_weight",
    "epsilon": "census_epsilon",
    "alpha1": "occlusion_alpha1",
    "alpha2": "occlusion_alpha2",
}


@dataclass(frozen=True)
class LossConfig:
    flow_smoothness_weight: float
    smoothness_weight: float
    planar_weight: float
    feature_weight: float
    rigid_weight: float
    photometric_weight: float
    census_epsilon: float
    occlusion_alpha1: float
    occlusion_alpha2: float
    min_segment_pixels: int

    def __post_init__(self):
        for item in fields(self):
            value = getattr(self, item.name)
            if value is None or value < 0:
                raise ConfigError(f"{item.name} must be >= 0, got {value}")
        if not self.census_epsilon > 0:
            raise ConfigError(f"census_epsilon must be > 0, got {self.census_epsilon}")

    @classmethod
    def from_config(cls, **overrides: Any) -> "LossConfig":
        values: dict[str, Any] = {
            "flow_smoothness_weight": config.flow_smoothness_weight,
            "smoothness_weight": config.smoothness_weight,
            "planar_weight": config.planar_weight,
            "feature_weight": config.feature_weight,
            "rigid_weight": config.rigid_weight,
            "photometric_weight": config.photometric_weight,
            "census_epsilon": config.census_epsilon,
            "occlusion_alpha1": config.occlusion_alpha1,
            "occlusion_alpha2": config.occlusion_alpha2,
            "min_segment_pixels": config.min_segment_pixels,
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LossConfig":
        known = {item.name for item in fields(cls)}
        overrides: dict[str, Any] = {}
        for key, value in data.items():
            name = _ALIASES.get(key, key)
            if name not in known:
                raise ConfigError(f"unknown loss config key: {key}")
            overrides[name] = int(value) if name == "min_segment_pixels" else float(value)
        return cls.from_config(**overrides)

    def to_dict(self) -> dict[str, Any]:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    def flow_weights(self) -> dict[str, float]:
        return {PATCH_PHOTOMETRIC: 1.0, SMOOTHNESS: self.flow_smoothness_weight}

    def depth_weights(self) -> dict[str, float]:
        return {
            PATCH_PHOTOMETRIC: self.photometric_weight,
            SMOOTHNESS: self.smoothness_weight,
            PLANAR: self.planar_weight,
            FLOW_CONSISTENCY: self.rigid_weight,
            FEATURE_SYNTHESIS: self.feature_weight,
        }


@dataclass(eq=False)
class TermResult:
    """Value of one loss term, its valid count, flags and gradient w.r.t. its input."""

    value: float
    count: int
    flags: tuple[str, ...] = ()
    grad_u: np.ndarray | None = None
    grad_v: np.ndarray | None = None
    grad_depth: np.ndarray | None = None
    per_pixel: np.ndarray | None = None


@dataclass(eq=False)
class LossBreakdown:
    objective: str
    terms: dict[str, float]
    weights: dict[str, float]
    counts: dict[str, int] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(self.weights[name] * self.terms[name] for name in self.terms))

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective": self.objective,
            "terms": dict(self.terms),
            "weights": dict(self.weights),
            "counts": dict(self.counts),
            "flags": list(self.flags),
            "total": self.total,
        }


def _term_value(term: "TermResult | float") -> tuple[float, int, tuple[str, ...]]:
    if isinstance(term, TermResult):
        return term.value, term.count, term.flags
    return float(term), 0, ()


def _breakdown(objective: str, weights: dict[str, float], terms: dict[str, "TermResult | float"]) -> LossBreakdown:
    breakdown = LossBreakdown(objective, {}, dict(weights))
    for name, term in terms.items():
        value, count, flags = _term_value(term)
        breakdown.terms[name] = value
        breakdown.counts[name] = count
        breakdown.flags.extend(f"{name}:{flag}" for flag in flags)
    return breakdown


def total_flow_loss(
    patch: "TermResult | float", smoothness: "TermResult | float", options: LossConfig | None = None
) -> LossBreakdown:
    """L_flow = L_patch + λ · L_sm."""
    options = options or LossConfig.from_config()
    return _breakdown("flow", options.flow_weights(), {PATCH_PHOTOMETRIC: patch, SMOOTHNESS: smoothness})


def total_depth_loss(
    photometric: "TermResult | float",
    smoothness: "TermResult | float",
    planar: "TermResult | float",
    rigid: "TermResult | float",
    feature: "TermResult | float",
    options: LossConfig | None = None,
) -> LossBreakdown:
    """L_depth = L_ph + λ1 L_sm + λ2 L_spp + L_rigid + λ3 L_feature."""
    options = options or LossConfig.from_config()
    return _breakdown(
        "depth",
        options.depth_weights(),
        {
            PATCH_PHOTOMETRIC: photometric,
            SMOOTHNESS: smoothness,
            PLANAR: planar,
            FLOW_CONSISTENCY: rigid,
            FEATURE_SYNTHESIS: feature,
        },
    )


def _check_shape(expected: tuple[int, int], actual: tuple[int, int], what: str) -> None:
    if tuple(expected) != tuple(actual):
        raise ImageError(f"{what} has shape {actual}, expected {expected}")


def _empty(shape: tuple[int, int], flag: str, flow: bool = True) -> TermResult:
    logger.warning("Loss term empty: %s", flag)
    zeros = np.zeros(shape)
    if flow:
        return TermResult(0.0, 0, (flag,), grad_u=zeros, grad_v=zeros.copy(), per_pixel=zeros.copy())
    return TermResult(0.0, 0, (flag,), grad_depth=zeros, per_pixel=zeros.copy())


def _all_neighbors_valid(valid: np.ndarray) -> np.ndarray:
    height, width = valid.shape
    padded = np.pad(valid, 1, mode="constant", constant_values=False)
    result = valid.copy()
    for dy, dx in CENSUS_OFFSETS:
        result &= padded[1 + dy : 1 + dy + height, 1 + dx : 1 + dx + width]
    return result


def patch_photometric_loss(
    I_t: ImagePlane,
    I_s: ImagePlane,
    flow: FlowField,
    patches: PatchSet,
    epsilon: float | None = None,
    mask: np.ndarray | None = None,
) -> TermResult:
    """
    Census distance between I_t and the view synthesized from I_s, on patch pixels.

    Each patch pixel P contributes F(census(I_t)(P), census(Î)(P)) with
    Î(p) = I_s(p + f(p)); overlapping patches count once per patch. The value
    is the weighted mean over valid patch pixels, i.e. pixels away from the
    border whose 3x3 neighborhood samples inside I_s and, if given, inside
    ``mask`` (non-occluded pixels).
    """
    epsilon = config.census_epsilon if epsilon is None else epsilon
    shape = I_t.shape
    _check_shape(shape, I_s.shape, "source image")
    _check_shape(shape, flow.shape, "flow")
    _check_shape(shape, patches.image_shape, "patch set")
    if patches.is_empty():
        return _empty(shape, "empty_patch_set")

    reference = I_t.gray()
    sampled = synthesize_with_gradient(I_s.gray()[..., None], flow)
    warped = sampled.values[..., 0]

    weights = patches.weight_map()
    ref_census = soft_census(reference, epsilon)
    warp_census = soft_census(warped, epsilon)
    valid = (weights > 0) & ref_census.valid & _all_neighbors_valid(sampled.valid)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    total_weight = float(weights[valid].sum())
    if total_weight == 0:
        return _empty(shape, "no_valid_patch_pixels")

    diff = ref_census.codes - warp_census.codes
    rho = census_distance(ref_census.codes, warp_census.codes)
    per_pixel = np.where(valid, rho, 0.0)
    value = float((weights * per_pixel).sum() / total_weight)

    # dL/dΔ_j where Δ_j = Î(p + o_j) − Î(p) feeds the j-th warped code
    scale = np.where(valid, weights / total_weight, 0.0)[..., None]
    coef = -scale * census_distance_derivative(diff) * warp_census.slopes
    height, width = shape
    grad_warped = np.zeros(shape)
    for j, (dy, dx) in enumerate(CENSUS_OFFSETS):
        inner = coef[1 : height - 1, 1 : width - 1, j]
        grad_warped[1 + dy : height - 1 + dy, 1 + dx : width - 1 + dx] += inner
        grad_warped[1 : height - 1, 1 : width - 1] -= inner

    return TermResult(
        value,
        int(valid.sum()),
        grad_u=grad_warped * sampled.dx[..., 0],
        grad_v=grad_warped * sampled.dy[..., 0],
        per_pixel=per_pixel,
    )


def _edge_weights(img: ImagePlane) -> tuple[np.ndarray, np.ndarray]:
    dx, dy = forward_differences(img.data)
    return np.exp(-np.abs(dx).mean(axis=-1)), np.exp(-np.abs(dy).mean(axis=-1))


def edge_aware_variation(
    components: list[np.ndarray], img: ImagePlane
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """
    Σ_c mean|∂x c| e^{−|∂x I|} + mean|∂y c| e^{−|∂y I|}, x-terms averaged over
    H(W−1) pixels and y-terms over (H−1)W. Returns value, gradient per
    component (subgradient 0 where a difference is 0) and per-pixel terms.
    """
    height, width = img.shape
    if height < 2 or width < 2:
        raise ImageError(f"smoothness needs at least 2x2 pixels, got {height}x{width}")
    weight_x, weight_y = _edge_weights(img)
    count_x = height * (width - 1)
    count_y = (height - 1) * width

    value = 0.0
    grads = []
    per_pixel = np.zeros((height, width))
    for component in components:
        _check_shape((height, width), component.shape, "smoothness input")
        diff_x, diff_y = forward_differences(component)
        term_x = np.abs(diff_x) * weight_x
        term_y = np.abs(diff_y) * weight_y
        value += float(term_x[:, :-1].sum() / count_x + term_y[:-1, :].sum() / count_y)
        per_pixel += term_x + term_y

        slope_x = (np.sign(diff_x) * weight_x)[:, :-1] / count_x
        slope_y = (np.sign(diff_y) * weight_y)[:-1, :] / count_y
        grad = np.zeros((height, width))
        grad[:, :-1] -= slope_x
        grad[:, 1:] += slope_x
        grad[:-1, :] -= slope_y
        grad[1:, :] += slope_y
        grads.append(grad)
    return value, grads, per_pixel


def smoothness_loss(f: FlowField, I_t: ImagePlane) -> TermResult:
    """Edge-aware first-order flow smoothness."""
    _check_shape(I_t.shape, f.shape, "flow")
    value, (grad_u, grad_v), per_pixel = edge_aware_variation([f.u, f.v], I_t)
    return TermResult(value, f.u.size, grad_u=grad_u, grad_v=grad_v, per_pixel=per_pixel)


def disparity_smoothness_loss(D: DepthMap, I_t: ImagePlane) -> TermResult:
    """Edge-aware smoothness of the mean-normalized disparity (1/D) / mean(1/D)."""
    _check_shape(I_t.shape, D.shape, "depth")
    valid = D.valid
    count = int(valid.sum())
    if count == 0:
        return _empty(D.shape, "no_valid_depth", flow=False)
    disparity = np.where(valid, 1.0 / np.where(valid, D.values, 1.0), 0.0)
    mean = float(disparity[valid].sum() / count)
    normalized = np.where(valid, disparity / mean, 1.0)

    value, (grad_norm,), per_pixel = edge_aware_variation([normalized], I_t)
    grad_norm = np.where(valid, grad_norm, 0.0)
    coupling = float((grad_norm * normalized).sum()) / (mean * count)
    grad_disparity = np.where(valid, grad_norm / mean - coupling, 0.0)
    grad_depth = np.where(valid, -grad_disparity * disparity**2, 0.0)
    return TermResult(value, count, grad_depth=grad_depth, per_pixel=per_pixel)


def flow_consistency_loss(
    f_rigid: FlowField, f_flow: FlowField, mask: np.ndarray | None = None
) -> TermResult:
    """Mean per-component L1 between rigid and supervision flow over masked pixels."""
    _check_shape(f_rigid.shape, f_flow.shape, "supervision flow")
    valid = f_rigid.valid & f_flow.valid
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        return _empty(f_rigid.shape, "empty_mask")
    du = f_rigid.u - f_flow.u
    dv = f_rigid.v - f_flow.v
    per_pixel = np.where(valid, np.abs(du) + np.abs(dv), 0.0)
    value = float(per_pixel.sum() / count)
    return TermResult(
        value,
        count,
        grad_u=np.where(valid, np.sign(du), 0.0) / count,
        grad_v=np.where(valid, np.sign(dv), 0.0) / count,
        per_pixel=per_pixel,
    )


def _check_pyramids(F_src: FeaturePyramid, F_tgt: FeaturePyramid) -> None:
    if (
        F_src.level_indices != F_tgt.level_indices
        or F_src.channels != F_tgt.channels
        or tuple(F_src.base_shape) != tuple(F_tgt.base_shape)
    ):
        raise ConfigError("feature pyramids do not share level structure")


def feature_synthesis_loss(
    F_src: FeaturePyramid, F_tgt: FeaturePyramid, rigid_flow: FlowField
) -> TermResult:
    """
    Multi-scale L1 between reference features and features synthesized from the other view.

    ``F_tgt`` belongs to the reference frame (where ``rigid_flow`` is defined),
    ``F_src`` to the other frame. Level ℓ is compared using the rigid flow
    downsampled to that level; the result is the sum of per-level means over
    valid pixels and channels.
    """
    _check_pyramids(F_src, F_tgt)
    shape = rigid_flow.shape
    _check_shape(tuple(F_tgt.base_shape), shape, "rigid flow")
    deepest = max(F_tgt.level_indices) if len(F_tgt) else 0
    flows = downsample_flow(rigid_flow, deepest) if deepest >= 1 else [rigid_flow]

    value = 0.0
    count = 0
    flags: list[str] = []
    grad_u = np.zeros(shape)
    grad_v = np.zeros(shape)
    for level, source, target in zip(F_tgt.level_indices, F_src.levels, F_tgt.levels):
        level_flow = flows[level]
        sampled = synthesize_with_gradient(source.data, level_flow)
        valid = sampled.valid
        level_count = int(valid.sum()) * target.channels
        if level_count == 0:
            flags.append(f"empty_level_{level}")
            logger.debug("Feature level %d has no valid samples", level)
            continue
        diff = sampled.values - target.data
        value += float(np.abs(diff)[valid].sum() / level_count)
        count += level_count

        slope = np.where(valid[..., None], np.sign(diff), 0.0) / level_count
        level_grad_u = (slope * sampled.dx).sum(axis=-1)
        level_grad_v = (slope * sampled.dy).sum(axis=-1)
        up_u, up_v = downsample_flow_adjoint(level_grad_u, level_grad_v, level, shape)
        grad_u += up_u
        grad_v += up_v

    return TermResult(value, count, tuple(flags), grad_u=grad_u, grad_v=grad_v)


@dataclass(eq=False)
class PlaneFit:
    """Planes n·X = 1 per segment label, plus labels skipped as degenerate or too small."""

    normals: dict[int, np.ndarray]
    skipped: dict[int, str]


def fit_segment_planes(
    D: DepthMap, segments: np.ndarray, K: CameraIntrinsics, min_pixels: int | None = None
) -> PlaneFit:
    """Least-squares plane through the backprojected points of each labelled segment."""
    min_pixels = config.min_segment_pixels if min_pixels is None else min_pixels
    segments = np.asarray(segments)
    _check_shape(D.shape, segments.shape, "segment map")
    rays = pixel_rays(K)
    normals: dict[int, np.ndarray] = {}
    skipped: dict[int, str] = {}
    for label in np.unique(segments):
        label = int(label)
        if label == 0:
            continue
        members = (segments == label) & D.valid
        if int(members.sum()) < min_pixels:
            skipped[label] = "too_small"
            continue
        points = rays[members] * D.values[members][:, None]
        if np.linalg.matrix_rank(points) < 3:
            skipped[label] = "degenerate"
            continue
        normal, *_ = np.linalg.lstsq(points, np.ones(len(points)), rcond=None)
        if np.any(rays[members] @ normal <= 0):
            skipped[label] = "plane_behind_camera"
            continue
        normals[label] = normal
    for label, reason in skipped.items():
        logger.debug("Plane fit skipped segment %d: %s", label, reason)
    return PlaneFit(normals, skipped)


def plane_depth(normal: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Depth of the plane n·X = 1 along every pixel ray (non-positive where the ray misses it)."""
    denominator = pixel_rays(K) @ normal
    return np.where(denominator > 0, 1.0 / np.where(denominator > 0, denominator, 1.0), 0.0)


def planar_consistency_loss(
    D: DepthMap,
    segments: np.ndarray,
    K: CameraIntrinsics,
    planes: PlaneFit | None = None,
    min_pixels: int | None = None,
) -> TermResult:
    """
    Mean |D − plane depth| over the pixels of every fitted segment.

    The planes are refitted from D unless ``planes`` is given; either way they
    are held constant for the gradient.
    """
    segments = np.asarray(segments)
    _check_shape(D.shape, segments.shape, "segment map")
    if not np.any(segments > 0):
        return _empty(D.shape, "unsegmented", flow=False)
    planes = planes or fit_segment_planes(D, segments, K, min_pixels)
    flags = tuple(f"segment_{label}_{reason}" for label, reason in sorted(planes.skipped.items()))

    residual = np.zeros(D.shape)
    used = np.zeros(D.shape, dtype=bool)
    for label, normal in planes.normals.items():
        members = (segments == label) & D.valid
        residual[members] = (D.values - plane_depth(normal, K))[members]
        used |= members
    count = int(used.sum())
    if count == 0:
        result = _empty(D.shape, "no_fitted_segments", flow=False)
        result.flags = result.flags + flags
        return result

    per_pixel = np.abs(residual)
    return TermResult(
        float(per_pixel[used].sum() / count),
        count,
        flags,
        grad_depth=np.where(used, np.sign(residual), 0.0) / count,
        per_pixel=per_pixel,
    )


def occlusion_mask(
    f_fw: FlowField, f_bw: FlowField, alpha1: float | None = None, alpha2: float | None = None
) -> np.ndarray:
    """
    Forward-backward consistency: p is kept iff, for b = f_bw(p + f_fw(p)),
    |f_fw(p) + b|² < α1 (|f_fw(p)|² + |b|²) + α2.

    b is read at each pixel carrying bilinear weight at p + f_fw(p), not
    interpolated, so across a depth edge b is either the foreground or the
    background motion. p is kept when any valid one passes, and rejected
    when it lands outside the image or f_fw(p) is invalid.
    """
    alpha1 = config.occlusion_alpha1 if alpha1 is None else alpha1
    alpha2 = config.occlusion_alpha2 if alpha2 is None else alpha2
    _check_shape(f_fw.shape, f_bw.shape, "backward flow")
    height, width = f_fw.shape
    if height < 2 or width < 2:
        return np.zeros((height, width), dtype=bool)
    xs, ys = pixel_grid(height, width)
    x = xs + f_fw.u
    y = ys + f_fw.v
    inside = (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)
    x = np.where(inside, x, 0.0)
    y = np.where(inside, y, 0.0)
    x0 = np.minimum(np.floor(x), width - 2).astype(np.intp)
    y0 = np.minimum(np.floor(y), height - 2).astype(np.intp)
    ax = x - x0
    ay = y - y0
    forward_squared = f_fw.u**2 + f_fw.v**2
    consistent = np.zeros((height, width), dtype=bool)
    for dy, dx, weight in (
        (0, 0, (1.0 - ax) * (1.0 - ay)),
        (0, 1, ax * (1.0 - ay)),
        (1, 0, (1.0 - ax) * ay),
        (1, 1, ax * ay),
    ):
        rows, cols = y0 + dy, x0 + dx
        back_u = f_bw.u[rows, cols]
        back_v = f_bw.v[rows, cols]
        mismatch = (f_fw.u + back_u) ** 2 + (f_fw.v + back_v) ** 2
        threshold = alpha1 * (forward_squared + back_u**2 + back_v**2) + alpha2
        consistent |= (weight > 0) & f_bw.valid[rows, cols] & (mismatch < threshold)
    return inside & f_fw.valid & consistent


def flow_objective(
    I_t: ImagePlane,
    I_s: ImagePlane,
    flow: FlowField,
    patches: PatchSet,
    options: LossConfig | None = None,
    mask: np.ndarray | None = None,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """L_flow with its gradient w.r.t. the flow components."""
    options = options or LossConfig.from_config()
    patch = patch_photometric_loss(I_t, I_s, flow, patches, options.census_epsilon, mask)
    smooth = smoothness_loss(flow, I_t)
    breakdown = total_flow_loss(patch, smooth, options)
    weight = options.flow_smoothness_weight
    grad_u = patch.grad_u + weight * smooth.grad_u
    grad_v = patch.grad_v + weight * smooth.grad_v
    return breakdown, grad_u, grad_v
