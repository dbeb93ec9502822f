#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : direct descent on log-depth and pose against the depth objective
"""

from dataclasses import dataclass, field, fields
from typing import Any, Callable

import numpy as np

from depthsup.config import config
from depthsup.core.errors import ConfigError, ImageError
from depthsup.core.features import FeatureConfig, PatchSet, build_feature_pyramid, extract_keypoints
from depthsup.core.geometry import (
    CameraIntrinsics,
    DepthMap,
    FlowField,
    PoseSE3,
    rigid_flow,
    rigid_flow_jacobians,
)
from depthsup.core.imaging import FeaturePyramid, ImagePlane, level_shape
from depthsup.core.logger import logger
from depthsup.core.losses import (
    LossBreakdown,
    LossConfig,
    PlaneFit,
    TermResult,
    disparity_smoothness_loss,
    feature_synthesis_loss,
    fit_segment_planes,
    flow_consistency_loss,
    flow_objective,
    patch_photometric_loss,
    planar_consistency_loss,
    total_depth_loss,
)

POSE_MODES = ("fixed", "joint")

STATUS_COMPLETED = "completed"
STATUS_CONVERGED = "converged"
STATUS_LINE_SEARCH_FAILED = "line_search_failed"

DEPTH_GROUP = "depth"
# pixels without any data term, moved by the regularizers alone
FILL_GROUP = "fill"
ROTATION_GROUP = "rotation"
TRANSLATION_GROUP = "translation"
FLOW_GROUP = "flow"

# iterations between progress lines at info level
PROGRESS_INTERVAL = 100


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int
    armijo_c: float
    backtrack_factor: float
    max_backtracks: int
    depth_step: float
    fill_step: float
    rotation_step: float
    translation_step: float
    flow_step: float
    step_growth: float
    max_step: float
    convergence_tol: float
    convergence_window: int
    pose_mode: str
    freeze_translation: bool
    init_depth: float | None
    init_perturbation: float
    plane_refit_interval: int

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if not 0 < self.armijo_c < 1:
            raise ConfigError(f"armijo_c must be in (0, 1), got {self.armijo_c}")
        if not 0 < self.backtrack_factor < 1:
            raise ConfigError(f"backtrack_factor must be in (0, 1), got {self.backtrack_factor}")
        if self.max_backtracks < 0:
            raise ConfigError(f"max_backtracks must be >= 0, got {self.max_backtracks}")
        for name in ("depth_step", "fill_step", "rotation_step", "translation_step", "flow_step", "max_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.step_growth < 1:
            raise ConfigError(f"step_growth must be >= 1, got {self.step_growth}")
        if self.convergence_tol < 0:
            raise ConfigError(f"convergence_tol must be >= 0, got {self.convergence_tol}")
        if self.convergence_window < 1:
            raise ConfigError(f"convergence_window must be >= 1, got {self.convergence_window}")
        if self.pose_mode not in POSE_MODES:
            raise ConfigError(f"pose_mode must be one of {POSE_MODES}, got {self.pose_mode!r}")
        if self.init_depth is not None and not self.init_depth > 0:
            raise ConfigError(f"init_depth must be > 0, got {self.init_depth}")
        if not 0 <= self.init_perturbation < 1:
            raise ConfigError(f"init_perturbation must be in [0, 1), got {self.init_perturbation}")
        if self.plane_refit_interval < 1:
            raise ConfigError(f"plane_refit_interval must be >= 1, got {self.plane_refit_interval}")

    @classmethod
    def from_config(cls, **overrides: Any) -> "OptimizerConfig":
        values = dict(config.optimizer)
        values.update(overrides)
        known = {item.name for item in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown optimizer config keys: {', '.join(unknown)}")
        missing = sorted(known - set(values))
        if missing:
            raise ConfigError(f"missing optimizer config keys: {', '.join(missing)}")
        for name in ("iterations", "max_backtracks", "plane_refit_interval", "convergence_window"):
            values[name] = int(values[name])
        values["freeze_translation"] = bool(values["freeze_translation"])
        if values["init_depth"] is not None:
            values["init_depth"] = float(values["init_depth"])
        return cls(**values)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OptimizerConfig":
        return cls.from_config(**data)

    def to_dict(self) -> dict[str, Any]:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    def initial_steps(self) -> dict[str, float]:
        return {
            DEPTH_GROUP: self.depth_step,
            FILL_GROUP: self.fill_step,
            ROTATION_GROUP: self.rotation_step,
            TRANSLATION_GROUP: self.translation_step,
        }


@dataclass(eq=False)
class Frames:
    """Target frame, one or more source frames and an optional planar segment map of the target."""

    target: ImagePlane
    sources: list[ImagePlane]
    segments: np.ndarray | None = None

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("at least one source frame is required")
        for source in self.sources:
            if source.shape != self.target.shape:
                raise ImageError(f"source frame {source.shape} does not match target {self.target.shape}")
        if self.segments is not None:
            self.segments = np.asarray(self.segments, dtype=np.int64)
            if self.segments.shape != self.target.shape:
                raise ImageError("segment map does not match the target frame")

    @property
    def shape(self) -> tuple[int, int]:
        return self.target.shape


@dataclass(eq=False)
class OptimState:
    log_depth: np.ndarray
    poses: list[PoseSE3]
    iteration: int = 0
    steps: dict[str, float] = field(default_factory=dict)

    @property
    def pose_chart(self) -> np.ndarray:
        """Axis-angle + translation 6-vector of the first source pose."""
        return self.poses[0].chart

    def depth(self) -> DepthMap:
        return DepthMap.from_log_depth(self.log_depth)


@dataclass(eq=False)
class Evaluation:
    breakdown: LossBreakdown
    grad_log_depth: np.ndarray | None = None
    grad_poses: list[np.ndarray] | None = None
    # pixels where a data term has a non-zero gradient in at least one view
    support: np.ndarray | None = None

    @property
    def total(self) -> float:
        return self.breakdown.total


@dataclass(eq=False)
class OptimResult:
    depth: DepthMap
    poses: list[PoseSE3]
    trace: list[dict[str, Any]]
    status: str
    iterations: int

    @property
    def pose(self) -> PoseSE3:
        return self.poses[0]

    @property
    def final_total(self) -> float:
        if not self.trace:
            return float("nan")
        return float(self.trace[-1]["accepted_total"])

    def to_trace_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "poses": [pose.to_dict() for pose in self.poses],
            "trace": self.trace,
        }


@dataclass(eq=False)
class FlowResult:
    flow: FlowField
    trace: list[dict[str, Any]]
    status: str
    iterations: int


def _disabled(reason: str = "disabled") -> TermResult:
    return TermResult(0.0, 0, (reason,))


def _combine(terms: list[TermResult], empty_reason: str) -> TermResult:
    """Sum of per-view term values; counts added, flags tagged with the view."""
    if not terms:
        return _disabled(empty_reason)
    flags = tuple(f"view{index}:{flag}" for index, term in enumerate(terms) for flag in term.flags)
    return TermResult(
        float(sum(term.value for term in terms)), int(sum(term.count for term in terms)), flags
    )


def usable_feature_levels(shape: tuple[int, int], options: FeatureConfig) -> FeatureConfig:
    """Drop pyramid levels too small to sample bilinearly (below 2 x 2)."""
    kept = [
        (level, count)
        for level, count in zip(options.levels, options.channels)
        if min(level_shape(shape, level)) >= 2
    ]
    if len(kept) < len(options.levels):
        logger.debug("Feature levels limited to %s for %dx%d frames", [level for level, _ in kept], *shape)
    return FeatureConfig(tuple(level for level, _ in kept), tuple(count for _, count in kept))


class DepthObjective:
    """
    L_depth over a target frame and its source frames as a function of
    (log-depth, source poses), with the gradient w.r.t. both.

    Photometric and feature terms are summed over the photometric sources;
    the flow-consistency term over the views that have supervision flow.
    A pixel is supported when some data term (photometric, feature or flow
    consistency) has a non-zero gradient there in at least one view.
    """

    def __init__(
        self,
        frames: Frames,
        K: CameraIntrinsics,
        supervision: "FlowField | dict[int, FlowField] | None" = None,
        loss_options: LossConfig | None = None,
        patches: PatchSet | None = None,
        flow_sources: list[int] | None = None,
        photometric_sources: list[int] | None = None,
        feature_options: FeatureConfig | None = None,
    ):
        if frames.shape != K.shape:
            raise ImageError(f"frames {frames.shape} do not match intrinsics {K.shape}")
        self.frames = frames
        self.K = K
        self.options = loss_options or LossConfig.from_config()
        self.patches = patches if patches is not None else extract_keypoints(frames.target)

        view_count = len(frames.sources)
        flow_sources = list(config.flow_sources if flow_sources is None else flow_sources)
        if photometric_sources is None:
            photometric_sources = config.photometric_sources
        self.photometric_sources = (
            list(range(view_count)) if photometric_sources is None else list(photometric_sources)
        )
        for index in flow_sources + self.photometric_sources:
            if not 0 <= index < view_count:
                raise ConfigError(f"source view {index} does not exist ({view_count} views)")

        if isinstance(supervision, FlowField):
            supervision = {flow_sources[0]: supervision} if flow_sources else {}
        supervision = supervision or {}
        self.supervision = {
            index: flow for index, flow in supervision.items() if index in flow_sources
        }
        for flow in self.supervision.values():
            if flow.shape != frames.shape:
                raise ImageError(f"supervision flow {flow.shape} does not match frames {frames.shape}")

        self.target_features: FeaturePyramid | None = None
        self.source_features: list[FeaturePyramid] = []
        if self.options.feature_weight > 0:
            levels = usable_feature_levels(frames.shape, feature_options or FeatureConfig.from_config())
            self.target_features = build_feature_pyramid(frames.target, levels.channels, levels.levels)
            self.source_features = [
                build_feature_pyramid(source, levels.channels, levels.levels) for source in frames.sources
            ]
        self.planes: PlaneFit | None = None

    def refit_planes(self, log_depth: np.ndarray, support: np.ndarray | None = None) -> None:
        """Fit one plane per segment, from the supported pixels only when ``support`` is given."""
        if self.frames.segments is None or self.options.planar_weight == 0:
            return
        segments = self.frames.segments if support is None else np.where(support, self.frames.segments, 0)
        self.planes = fit_segment_planes(
            DepthMap.from_log_depth(log_depth), segments, self.K, self.options.min_segment_pixels
        )

    def evaluate(
        self, log_depth: np.ndarray, poses: list[PoseSE3], with_gradient: bool = True
    ) -> Evaluation:
        if len(poses) != len(self.frames.sources):
            raise ConfigError(f"{len(poses)} poses given for {len(self.frames.sources)} source views")
        options = self.options
        target = self.frames.target
        D = DepthMap.from_log_depth(log_depth)
        grad_log_depth = np.zeros(D.shape)
        grad_poses: list[np.ndarray] = []
        photometric: list[TermResult] = []
        feature: list[TermResult] = []
        rigid: list[TermResult] = []
        support = np.zeros(D.shape, dtype=bool)

        for index, (source, pose) in enumerate(zip(self.frames.sources, poses)):
            jacobians = rigid_flow_jacobians(D, pose, self.K) if with_gradient else None
            flow = jacobians.flow if jacobians is not None else rigid_flow(D, pose, self.K)
            grad_u = np.zeros(D.shape)
            grad_v = np.zeros(D.shape)

            if index in self.photometric_sources and options.photometric_weight > 0:
                term = patch_photometric_loss(target, source, flow, self.patches, options.census_epsilon)
                photometric.append(term)
                grad_u += options.photometric_weight * term.grad_u
                grad_v += options.photometric_weight * term.grad_v
            if index in self.photometric_sources and self.target_features is not None:
                term = feature_synthesis_loss(self.source_features[index], self.target_features, flow)
                feature.append(term)
                grad_u += options.feature_weight * term.grad_u
                grad_v += options.feature_weight * term.grad_v
            if index in self.supervision and options.rigid_weight > 0:
                term = flow_consistency_loss(flow, self.supervision[index])
                rigid.append(term)
                grad_u += options.rigid_weight * term.grad_u
                grad_v += options.rigid_weight * term.grad_v
            support |= flow.valid & ((grad_u != 0) | (grad_v != 0))

            if jacobians is not None:
                grad_log_depth += grad_u * jacobians.d_log_depth[..., 0] + grad_v * jacobians.d_log_depth[..., 1]
                grad_poses.append(
                    np.einsum("hw,hwk->k", grad_u, jacobians.d_pose[..., 0, :])
                    + np.einsum("hw,hwk->k", grad_v, jacobians.d_pose[..., 1, :])
                )

        if options.smoothness_weight > 0:
            smoothness = disparity_smoothness_loss(D, target)
            grad_log_depth += options.smoothness_weight * smoothness.grad_depth * D.values
        else:
            smoothness = _disabled()

        if options.planar_weight == 0:
            planar = _disabled()
        elif self.frames.segments is None:
            planar = _disabled("unsegmented")
        else:
            planar = planar_consistency_loss(
                D, self.frames.segments, self.K, self.planes, options.min_segment_pixels
            )
            grad_log_depth += options.planar_weight * planar.grad_depth * D.values

        breakdown = total_depth_loss(
            _combine(photometric, "disabled"),
            smoothness,
            planar,
            _combine(rigid, "no_supervision"),
            _combine(feature, "disabled"),
            options,
        )
        if not with_gradient:
            return Evaluation(breakdown, support=support)
        return Evaluation(breakdown, grad_log_depth, grad_poses, support)

    def total(self, log_depth: np.ndarray, poses: list[PoseSE3]) -> float:
        return self.evaluate(log_depth, poses, with_gradient=False).total


def initial_log_depth(
    shape: tuple[int, int],
    options: OptimizerConfig,
    prior: float | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """Constant log-depth at the configured value (else ``prior``), optionally perturbed by ±p."""
    value = options.init_depth if options.init_depth is not None else prior
    if value is None or not value > 0:
        raise ConfigError("no initial depth: set optimizer.init_depth or provide the scene mean")
    depth = np.full(shape, float(value))
    if options.init_perturbation > 0:
        rng = np.random.default_rng(config.seed if seed is None else seed)
        depth *= 1.0 + rng.uniform(-options.init_perturbation, options.init_perturbation, shape)
    return np.log(depth)


def _scaled_direction(gradient: np.ndarray, step: float) -> np.ndarray:
    """Steepest descent scaled so the largest coordinate moves by ``step``."""
    scale = float(np.max(np.abs(gradient))) if gradient.size else 0.0
    if scale == 0:
        return np.zeros_like(gradient)
    return -gradient * (step / scale)


def update_steps(
    steps: dict[str, float],
    alpha: float,
    options: OptimizerConfig,
    initial: dict[str, float],
    groups: list[str] | None = None,
) -> None:
    """Grow after a full step; after a backtrack keep the accepted size, never below the initial step."""
    for group in groups or list(steps):
        value = steps[group]
        if alpha == 1.0:
            steps[group] = min(value * options.step_growth, options.max_step)
        else:
            steps[group] = max(value * alpha, initial[group])


def has_converged(totals: list[float], options: OptimizerConfig) -> bool:
    """Relative loss decrease over the last ``convergence_window`` accepted steps is below tolerance."""
    window = options.convergence_window
    if len(totals) <= window:
        return False
    before, after = totals[-window - 1], totals[-1]
    return before - after <= options.convergence_tol * max(abs(before), np.finfo(float).tiny)


def _backtrack(
    evaluate: Callable[[float], float], total: float, slope: float, options: OptimizerConfig
) -> tuple[float | None, float | None, int]:
    """Armijo backtracking from alpha = 1; returns (alpha, trial total, backtracks) or Nones on failure."""
    alpha = 1.0
    for backtracks in range(options.max_backtracks + 1):
        trial = evaluate(alpha)
        if np.isfinite(trial) and trial <= total + options.armijo_c * alpha * slope:
            return alpha, trial, backtracks
        alpha *= options.backtrack_factor
    return None, None, options.max_backtracks


def optimize(
    frames: Frames,
    K: CameraIntrinsics,
    supervision: "FlowField | dict[int, FlowField] | None" = None,
    options: OptimizerConfig | None = None,
    loss_options: LossConfig | None = None,
    init_poses: list[PoseSE3] | None = None,
    init_log_depth: np.ndarray | None = None,
    depth_prior: float | None = None,
    patches: PatchSet | None = None,
    seed: int | None = None,
    objective: DepthObjective | None = None,
) -> OptimResult:
    """
    Minimize L_depth over log-depth (and the source poses in joint mode).

    Each iteration moves every parameter group along its normalized steepest
    descent direction and backtracks until the Armijo condition holds. Pixels
    that no data term reaches form their own group: they take a second,
    separately normalized step driven by the smoothness and planar terms, so
    the regularizers carry depth into them at a useful rate. Step sizes grow
    after a full step and restart from at least their initial value after a
    backtrack. Planes of the planar term are fitted to the supported pixels
    every ``plane_refit_interval`` iterations and held fixed within one. The
    run has converged once the relative loss decrease over
    ``convergence_window`` iterations drops below ``convergence_tol``. It
    stops on a failed line search only when neither group can move.
    """
    options = options or OptimizerConfig.from_config()
    objective = objective or DepthObjective(frames, K, supervision, loss_options, patches)
    view_count = len(frames.sources)
    poses = list(init_poses) if init_poses is not None else [PoseSE3.identity()] * view_count
    if len(poses) != view_count:
        raise ConfigError(f"{len(poses)} initial poses given for {view_count} source views")
    if init_log_depth is None:
        init_log_depth = initial_log_depth(frames.shape, options, depth_prior, seed)
    initial_steps = options.initial_steps()
    state = OptimState(np.array(init_log_depth, dtype=np.float64), poses, 0, dict(initial_steps))
    optimize_pose = options.pose_mode == "joint"
    main_groups = [DEPTH_GROUP, ROTATION_GROUP, TRANSLATION_GROUP]

    logger.info(
        "Optimizing depth %dx%d over %d view(s), pose mode %s, %d iterations",
        frames.shape[0], frames.shape[1], view_count, options.pose_mode, options.iterations,
    )
    trace: list[dict[str, Any]] = []
    totals: list[float] = []
    support: np.ndarray | None = None
    status = STATUS_COMPLETED
    for iteration in range(options.iterations):
        state.iteration = iteration
        if iteration % options.plane_refit_interval == 0:
            objective.refit_planes(state.log_depth, support)
        current = objective.evaluate(state.log_depth, state.poses)
        total = current.total
        support = current.support
        gradient = current.grad_log_depth
        unsupported = ~support if support is not None else np.zeros(gradient.shape, dtype=bool)

        depth_direction = np.zeros_like(gradient)
        depth_direction[~unsupported] = _scaled_direction(gradient[~unsupported], state.steps[DEPTH_GROUP])
        slope = float((gradient * depth_direction).sum())
        pose_directions = [np.zeros(6) for _ in state.poses]
        if optimize_pose:
            for index, pose_gradient in enumerate(current.grad_poses):
                direction = pose_directions[index]
                direction[:3] = _scaled_direction(pose_gradient[:3], state.steps[ROTATION_GROUP])
                if not options.freeze_translation:
                    direction[3:] = _scaled_direction(pose_gradient[3:], state.steps[TRANSLATION_GROUP])
                slope += float(pose_gradient @ direction)

        fill_direction = np.zeros_like(gradient)
        fill_direction[unsupported] = _scaled_direction(gradient[unsupported], state.steps[FILL_GROUP])
        fill_slope = float((gradient * fill_direction).sum())

        if slope >= 0 and fill_slope >= 0:
            status = STATUS_CONVERGED
            trace.append(_trace_entry(iteration, current.breakdown, total, 0.0, 0, state.steps))
            break

        alpha, accepted, backtracks = 0.0, total, 0
        moved = False
        if slope < 0:
            def trial_total(alpha: float) -> float:
                trial_poses = [
                    pose.perturbed(alpha * direction) if optimize_pose else pose
                    for pose, direction in zip(state.poses, pose_directions)
                ]
                return objective.total(state.log_depth + alpha * depth_direction, trial_poses)

            found, trial, backtracks = _backtrack(trial_total, total, slope, options)
            if found is None or trial is None:
                logger.debug("Depth line search failed at iteration %d after %d backtracks", iteration, backtracks)
                for group in main_groups:
                    state.steps[group] = initial_steps[group]
            else:
                alpha, accepted, moved = found, trial, True
                state.log_depth = state.log_depth + alpha * depth_direction
                if optimize_pose:
                    state.poses = [
                        pose.perturbed(alpha * direction) for pose, direction in zip(state.poses, pose_directions)
                    ]
                update_steps(state.steps, alpha, options, initial_steps, main_groups)

        if fill_slope < 0:
            base = state.log_depth
            fill_alpha, fill_total, _ = _backtrack(
                lambda step: objective.total(base + step * fill_direction, state.poses),
                accepted, fill_slope, options,
            )
            if fill_alpha is not None and fill_total is not None:
                state.log_depth = base + fill_alpha * fill_direction
                accepted, moved = fill_total, True
                update_steps(state.steps, fill_alpha, options, initial_steps, [FILL_GROUP])
            else:
                state.steps[FILL_GROUP] = initial_steps[FILL_GROUP]

        if not moved:
            logger.warning(
                "Line search failed at iteration %d after %d backtracks (loss %.6g)", iteration, backtracks, total
            )
            trace.append(_trace_entry(iteration, current.breakdown, total, 0.0, backtracks, state.steps))
            status = STATUS_LINE_SEARCH_FAILED
            break

        trace.append(_trace_entry(iteration, current.breakdown, accepted, alpha, backtracks, state.steps))
        totals.append(accepted)
        if iteration % PROGRESS_INTERVAL == 0:
            logger.info("Iteration %d: loss %.6g -> %.6g (step %.3g)", iteration, total, accepted, alpha)
        if has_converged(totals, options):
            status = STATUS_CONVERGED
            break

    logger.info("Depth optimization finished: %s after %d iteration(s)", status, len(trace))
    return OptimResult(state.depth(), state.poses, trace, status, len(trace))


def _trace_entry(
    iteration: int,
    breakdown: LossBreakdown,
    accepted_total: float,
    alpha: float,
    backtracks: int,
    steps: dict[str, float],
) -> dict[str, Any]:
    return {
        "iteration": iteration,
        "loss": breakdown.to_dict(),
        "accepted_total": float(accepted_total),
        "step": alpha,
        "backtracks": backtracks,
        "steps": dict(steps),
    }


def optimize_flow(
    I_t: ImagePlane,
    I_s: ImagePlane,
    init_flow: FlowField,
    patches: PatchSet | None = None,
    options: OptimizerConfig | None = None,
    loss_options: LossConfig | None = None,
    mask: np.ndarray | None = None,
) -> FlowResult:
    """Minimize L_flow over a dense flow field with the same backtracking descent."""
    options = options or OptimizerConfig.from_config()
    loss_options = loss_options or LossConfig.from_config()
    patches = patches if patches is not None else extract_keypoints(I_t)
    stacked = init_flow.stacked().copy()
    valid = init_flow.valid.copy()
    initial_steps = {FLOW_GROUP: options.flow_step}
    steps = dict(initial_steps)

    logger.info("Optimizing flow %dx%d with %d keypoints", I_t.height, I_t.width, len(patches))
    trace: list[dict[str, Any]] = []
    totals: list[float] = []
    status = STATUS_COMPLETED
    for iteration in range(options.iterations):
        flow = FlowField.from_stacked(stacked, valid)
        breakdown, grad_u, grad_v = flow_objective(I_t, I_s, flow, patches, loss_options, mask)
        gradient = np.stack([grad_u, grad_v], axis=-1)
        direction = _scaled_direction(gradient, steps[FLOW_GROUP])
        slope = float((gradient * direction).sum())
        total = breakdown.total
        if slope >= 0:
            status = STATUS_CONVERGED
            trace.append(_trace_entry(iteration, breakdown, total, 0.0, 0, steps))
            break

        def trial_total(alpha: float) -> float:
            trial = FlowField.from_stacked(stacked + alpha * direction, valid)
            return flow_objective(I_t, I_s, trial, patches, loss_options, mask)[0].total

        alpha, accepted, backtracks = _backtrack(trial_total, total, slope, options)
        if alpha is None or accepted is None:
            logger.warning("Flow line search failed at iteration %d (loss %.6g)", iteration, total)
            trace.append(_trace_entry(iteration, breakdown, total, 0.0, backtracks, steps))
            status = STATUS_LINE_SEARCH_FAILED
            break
        stacked = stacked + alpha * direction
        trace.append(_trace_entry(iteration, breakdown, accepted, alpha, backtracks, steps))
        update_steps(steps, alpha, options, initial_steps)
        totals.append(accepted)
        if has_converged(totals, options):
            status = STATUS_CONVERGED
            break

    logger.info("Flow optimization finished: %s after %d iteration(s)", status, len(trace))
    return FlowResult(FlowField.from_stacked(stacked, valid), trace, status, len(trace))


def fd_gradient(loss_fn: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise ConfigError(f"finite-difference step must be > 0, got {h}")
    x = np.array(x, dtype=np.float64)
    gradient = np.zeros_like(x)
    flat = x.reshape(-1)
    flat_gradient = gradient.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + h
        upper = loss_fn(x.copy())
        flat[index] = original - h
        lower = loss_fn(x.copy())
        flat[index] = original
        flat_gradient[index] = (upper - lower) / (2.0 * h)
    return gradient
