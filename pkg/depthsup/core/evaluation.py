#!/usr/bin/env python
# coding=utf-8

"""
* @Description  : depth metrics with median scaling, flow endpoint error, mask overlap
"""

from dataclasses import asdict, dataclass

import numpy as np

from depthsup.config import config
from depthsup.core.errors import EvaluationError
from depthsup.core.geometry import DepthMap, FlowField

DELTA_THRESHOLD = 1.25


@dataclass(frozen=True)
class EvalReport:
    abs_rel: float
    rms: float
    mean_log10: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FlowReport:
    mean_epe: float
    max_epe: float
    n_pixels: int

    def to_dict(self) -> dict:
        return asdict(self)


def lower_median(values: np.ndarray) -> float:
    """Median of a 1-D sample; for even counts the lower of the two middle values."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise EvaluationError("median of an empty set")
    return float(np.partition(values, (values.size - 1) // 2)[(values.size - 1) // 2])


def evaluation_mask(
    D: DepthMap,
    D_gt: DepthMap,
    mask: np.ndarray | None = None,
    min_depth: float | None = None,
    max_depth: float | None = None,
) -> np.ndarray:
    """Pixels where both depths are valid and positive, inside ``mask`` and the optional depth range of the reference."""
    if D.shape != D_gt.shape:
        raise EvaluationError(f"prediction {D.shape} and reference {D_gt.shape} differ in shape")
    valid = D.valid & D_gt.valid & (D.values > 0) & (D_gt.values > 0)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != D.shape:
            raise EvaluationError(f"mask {mask.shape} does not match depth {D.shape}")
        valid &= mask
    min_depth = config.eval_min_depth if min_depth is None else min_depth
    max_depth = config.eval_max_depth if max_depth is None else max_depth
    if min_depth is not None:
        valid &= D_gt.values >= min_depth
    if max_depth is not None:
        valid &= D_gt.values <= max_depth
    return valid


def median_scale(D: DepthMap, D_gt: DepthMap, mask: np.ndarray | None = None) -> DepthMap:
    """D · median(D̂) / median(D), medians over the masked pixels."""
    valid = evaluation_mask(D, D_gt, mask)
    if not np.any(valid):
        raise EvaluationError("median scaling over an empty mask")
    predicted = lower_median(D.values[valid])
    if predicted == 0:
        raise EvaluationError("median of the prediction is zero")
    ratio = lower_median(D_gt.values[valid]) / predicted
    return DepthMap(D.values * ratio, D.valid)


def compute_metrics(
    D: DepthMap,
    D_gt: DepthMap,
    mask: np.ndarray | None = None,
    min_depth: float | None = None,
    max_depth: float | None = None,
) -> EvalReport:
    """Abs Rel, RMS, mean log10 and δ < 1.25^k accuracies over the masked pixels."""
    valid = evaluation_mask(D, D_gt, mask, min_depth, max_depth)
    count = int(valid.sum())
    if count == 0:
        raise EvaluationError("no valid pixels to evaluate")
    predicted = D.values[valid]
    reference = D_gt.values[valid]
    ratio = np.maximum(predicted / reference, reference / predicted)
    return EvalReport(
        abs_rel=float(np.mean(np.abs(predicted - reference) / reference)),
        rms=float(np.sqrt(np.mean((predicted - reference) ** 2))),
        mean_log10=float(np.mean(np.abs(np.log10(predicted) - np.log10(reference)))),
        delta1=float(np.mean(ratio < DELTA_THRESHOLD)),
        delta2=float(np.mean(ratio < DELTA_THRESHOLD**2)),
        delta3=float(np.mean(ratio < DELTA_THRESHOLD**3)),
        n_pixels=count,
    )


def evaluate_depth(
    D: DepthMap,
    D_gt: DepthMap,
    mask: np.ndarray | None = None,
    median_scaling: bool = True,
    min_depth: float | None = None,
    max_depth: float | None = None,
) -> EvalReport:
    valid = evaluation_mask(D, D_gt, mask, min_depth, max_depth)
    if median_scaling:
        D = median_scale(D, D_gt, valid)
    return compute_metrics(D, D_gt, valid)


def flow_endpoint_error(f: FlowField, f_ref: FlowField, mask: np.ndarray | None = None) -> FlowReport:
    """Mean and max endpoint error over pixels valid in both flows and in ``mask``."""
    if f.shape != f_ref.shape:
        raise EvaluationError(f"flow {f.shape} and reference {f_ref.shape} differ in shape")
    valid = f.valid & f_ref.valid
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise EvaluationError("no valid pixels to compare flows")
    error = np.hypot(f.u - f_ref.u, f.v - f_ref.v)[valid]
    return FlowReport(float(error.mean()), float(error.max()), count)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise EvaluationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return float((a & b).sum()) / union
