#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : finite-difference checks of every analytic loss gradient

Each check draws random states on a small rendered scene, picks a random
direction and compares the analytic directional derivative with central
differences of the loss along that direction. States whose step straddles a
kink (L1 terms, bilinear cell edges, mask changes) are detected by comparing
central differences at h and h/2 and redrawn.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from depthsup.core.errors import ConfigError
from depthsup.core.experiment import scene_frames, supervision_flows
from depthsup.core.features import FeatureConfig, build_feature_pyramid, extract_keypoints
from depthsup.core.geometry import DepthMap, FlowField
from depthsup.core.logger import logger
from depthsup.core.losses import (
    LossConfig,
    disparity_smoothness_loss,
    feature_synthesis_loss,
    fit_segment_planes,
    flow_consistency_loss,
    patch_photometric_loss,
    planar_consistency_loss,
    smoothness_loss,
)
from depthsup.core.optimizer import DepthObjective, fd_gradient
from depthsup.core.synth import RenderedScene, random_scene_spec, render

FD_STEP = 1e-5
RELATIVE_TOLERANCE = 1e-4
GRADCHECK_SHAPE = (32, 48)
# feature pyramid used by the checks, smaller than the default one
CHECK_FEATURES = FeatureConfig((1, 2, 3), (8, 8, 8))
# redraws allowed per requested sample when states straddle kinks
MAX_ATTEMPTS_PER_SAMPLE = 5
_DENOMINATOR_FLOOR = 1e-10

# (loss along t, analytic derivative at t = 0)
DirectionalCheck = tuple[Callable[[float], float], float]


@dataclass
class GradCheckResult:
    term: str
    samples: int
    skipped: int
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "samples": self.samples,
            "skipped": self.skipped,
            "max_relative_error": self.max_relative_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _DENOMINATOR_FLOOR)


def directional_fd(loss_along: Callable[[float], float], h: float) -> float:
    return float(fd_gradient(lambda t: loss_along(float(t[0])), np.zeros(1), h)[0])


def check_scene(seed: int) -> RenderedScene:
    return render(random_scene_spec(seed, *GRADCHECK_SHAPE))


def _perturbed_flow(scene: RenderedScene, rng: np.random.Generator) -> FlowField:
    base = scene.flow
    return FlowField(
        base.u + rng.uniform(-0.5, 0.5, base.shape),
        base.v + rng.uniform(-0.5, 0.5, base.shape),
    )


def _flow_check(
    flow: FlowField, rng: np.random.Generator, evaluate: Callable[[FlowField], tuple[float, np.ndarray, np.ndarray]]
) -> DirectionalCheck:
    direction_u = rng.standard_normal(flow.shape)
    direction_v = rng.standard_normal(flow.shape)
    _, grad_u, grad_v = evaluate(flow)
    analytic = float((grad_u * direction_u).sum() + (grad_v * direction_v).sum())

    def along(t: float) -> float:
        return evaluate(FlowField(flow.u + t * direction_u, flow.v + t * direction_v, flow.valid))[0]

    return along, analytic


def _patch_state(scene: RenderedScene, rng: np.random.Generator) -> DirectionalCheck:
    patches = extract_keypoints(scene.target)
    epsilon = LossConfig.from_config().census_epsilon

    def evaluate(flow: FlowField):
        term = patch_photometric_loss(scene.target, scene.I_s, flow, patches, epsilon)
        return term.value, term.grad_u, term.grad_v

    return _flow_check(_perturbed_flow(scene, rng), rng, evaluate)


def _smoothness_state(scene: RenderedScene, rng: np.random.Generator) -> DirectionalCheck:
    def evaluate(flow: FlowField):
        term = smoothness_loss(flow, scene.target)
        return term.value, term.grad_u, term.grad_v

    return _flow_check(_perturbed_flow(scene, rng), rng, evaluate)


def _flow_consistency_state(scene: RenderedScene, rng: np.random.Generator) -> DirectionalCheck:
    reference = _perturbed_flow(scene, rng)
    mask = rng.uniform(size=reference.shape) < 0.8

    def evaluate(flow: FlowField):
        term = flow_consistency_loss(flow, reference, mask)
        return term.value, term.grad_u, term.grad_v

    return _flow_check(_perturbed_flow(scene, rng), rng, evaluate)


def _feature_state(scene: RenderedScene, rng: np.random.Generator) -> DirectionalCheck:
    target = build_feature_pyramid(scene.target, CHECK_FEATURES.channels, CHECK_FEATURES.levels)
    source = build_feature_pyramid(scene.I_s, CHECK_FEATURES.channels, CHECK_FEATURES.levels)

    def evaluate(flow: FlowField):
        term = feature_synthesis_loss(source, target, flow)
        return term.value, term.grad_u, term.grad_v

    return _flow_check(_perturbed_flow(scene, rng), rng, evaluate)


def _perturbed_depth(scene: RenderedScene, rng: np.random.Generator) -> np.ndarray:
    return scene.depth.values * np.exp(rng.uniform(-0.1, 0.1, scene.depth.shape))


def _depth_check(
    depth: np.ndarray, rng: np.random.Generator, evaluate: Callable[[np.ndarray], tuple[float, np.ndarray]]
) -> DirectionalCheck:
    direction = rng.standard_normal(depth.shape) * 0.1
    _, gradient = evaluate(depth)
    analytic = float((gradient * direction).sum())
    return (lambda t: evaluate(depth + t * direction)[0]), analytic


def _planar_state(scene: RenderedScene, rng: np.random.Generator) -> DirectionalCheck:
    depth = _perturbed_depth(scene, rng)
    K = scene.spec.K
    planes = fit_segment_planes(DepthMap(depth), scene.segments, K)

    def evaluate(values: np.ndarray):
        term = planar_consistency_loss(DepthMap(values), scene.segments, K, planes)
        return term.value, term.grad_depth

    return _depth_check(depth, rng, evaluate)


def _disparity_smoothness_state(scene: RenderedScene, rng: np.random.Generator) -> DirectionalCheck:
    def evaluate(values: np.ndarray):
        term = disparity_smoothness_loss(DepthMap(values), scene.target)
        return term.value, term.grad_depth

    return _depth_check(_perturbed_depth(scene, rng), rng, evaluate)


def _depth_total_state(scene: RenderedScene, rng: np.random.Generator) -> DirectionalCheck:
    objective = DepthObjective(
        scene_frames(scene),
        scene.spec.K,
        supervision_flows(scene),
        feature_options=CHECK_FEATURES,
    )
    log_depth = np.log(_perturbed_depth(scene, rng))
    poses = [view.pose.perturbed(rng.uniform(-0.01, 0.01, 6)) for view in scene.views]
    objective.refit_planes(log_depth)
    current = objective.evaluate(log_depth, poses)

    depth_direction = rng.standard_normal(log_depth.shape) * 0.1
    pose_directions = [rng.standard_normal(6) * 0.01 for _ in poses]
    analytic = float((current.grad_log_depth * depth_direction).sum()) + sum(
        float(gradient @ direction) for gradient, direction in zip(current.grad_poses, pose_directions)
    )

    def along(t: float) -> float:
        trial = [pose.perturbed(t * direction) for pose, direction in zip(poses, pose_directions)]
        return objective.total(log_depth + t * depth_direction, trial)

    return along, analytic


STATE_BUILDERS: dict[str, Callable[[RenderedScene, np.random.Generator], DirectionalCheck]] = {
    "patch": _patch_state,
    "smoothness": _smoothness_state,
    "flow_consistency": _flow_consistency_state,
    "feature": _feature_state,
    "planar": _planar_state,
    "disparity_smoothness": _disparity_smoothness_state,
    "depth_total": _depth_total_state,
}
GRADCHECK_TERMS = tuple(STATE_BUILDERS)


def check_term(term: str, samples: int = 100, seed: int = 0, h: float = FD_STEP) -> GradCheckResult:
    """Compare analytic and finite-difference directional derivatives at ``samples`` random states."""
    if term not in STATE_BUILDERS:
        raise ConfigError(f"unknown gradient check term {term!r}, expected one of {GRADCHECK_TERMS}")
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    scene = check_scene(seed)
    builder = STATE_BUILDERS[term]

    worst = 0.0
    checked = 0
    skipped = 0
    for _ in range(samples * MAX_ATTEMPTS_PER_SAMPLE):
        if checked == samples:
            break
        along, analytic = builder(scene, rng)
        numeric = directional_fd(along, h)
        refined = directional_fd(along, h / 2)
        if relative_error(numeric, refined) > 0.1 * RELATIVE_TOLERANCE:
            skipped += 1
            continue
        worst = max(worst, relative_error(analytic, numeric))
        checked += 1

    if checked < samples:
        logger.warning("Gradient check %s: only %d of %d states away from kinks", term, checked, samples)
        worst = float("inf")
    result = GradCheckResult(term, checked, skipped, worst, RELATIVE_TOLERANCE)
    logger.info(
        "Gradient check %s: %d states, %d redrawn, max relative error %.3g (%s)",
        term, checked, skipped, worst, "pass" if result.passed else "FAIL",
    )
    return result


def check_all(samples: int = 100, seed: int = 0) -> list[GradCheckResult]:
    return [check_term(term, samples, seed) for term in GRADCHECK_TERMS]
