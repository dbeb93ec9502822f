#!/usr/bin/env python
# coding=utf-8

'''
Description  :  Depth supervision toolkit command line
'''


import argparse
import json
import os
import sys
from datetime import datetime
from typing import Any

import numpy as np

from depthsup.config import config
from depthsup.core.errors import ConfigError, DepthSupError, GeometryError
from depthsup.core.evaluation import compute_metrics, evaluate_depth, flow_endpoint_error, mask_iou, median_scale
from depthsup.core.experiment import (
    ExperimentManifest,
    build_provenance,
    load_scene,
    save_scene,
    scene_frames,
    supervision_flows,
    write_provenance,
)
from depthsup.core.fileio import read_depth, read_flo, read_json, read_mask, write_depth, write_json
from depthsup.core.geometry import PoseSE3, rigid_flow
from depthsup.core.gradcheck import GRADCHECK_TERMS, check_all, check_term
from depthsup.core.logger import logger
from depthsup.core.losses import LossConfig, flow_objective, occlusion_mask
from depthsup.core.optimizer import DepthObjective, OptimizerConfig, optimize
from depthsup.core.synth import PRESETS, SceneSpec, preset_scene, render, summarize

DEFAULT_FLOW_TOLERANCE = 1e-3


def parse_arguments(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog="depthsup",
        description="Depth supervision toolkit - losses, direct depth optimization and synthetic oracles",
        epilog="""
Configuration file support:
Defaults are loaded from configuration.yaml (working directory first, else the bundled file).
Environment overrides: DEPTHSUP_SEED, DEPTHSUP_NUM_THREADS.

Examples:
  python -m depthsup synth --preset two_plane --out scene/
  python -m depthsup loss-eval --scene scene/manifest.json
  python -m depthsup optimize --scene scene/manifest.json --loss-config loss.json --out depth.pfm --trace trace.json
  python -m depthsup eval-depth --pred depth.pfm --gt scene/depth.pfm --out report.json
  python -m depthsup flow-check --scene scene/manifest.json
  python -m depthsup gradcheck --term all
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth = subparsers.add_parser("synth", help="Render a synthetic scene bundle")
    source = synth.add_mutually_exclusive_group(required=True)
    source.add_argument("--spec", help="SceneSpec JSON file")
    source.add_argument("--preset", choices=sorted(PRESETS), help="Built-in scene")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.add_argument("--seed", type=int, help="Overrides the scene seed")
    synth.add_argument("--height", type=int, help="Preset image height (default from config)")
    synth.add_argument("--width", type=int, help="Preset image width (default from config)")

    loss_eval = subparsers.add_parser("loss-eval", help="Evaluate the loss breakdown of a scene")
    loss_eval.add_argument("--scene", required=True, help="SceneSpec JSON or bundle manifest.json")
    loss_eval.add_argument("--depth", help="Depth PFM (default: ground-truth depth)")
    loss_eval.add_argument("--pose", help="Pose JSON, one object or a list per view (default: ground truth)")
    loss_eval.add_argument("--loss-config", help="Loss config JSON")
    loss_eval.add_argument("--out", help="Breakdown JSON")

    optimize_parser = subparsers.add_parser("optimize", help="Optimize depth (and pose) by direct descent")
    optimize_parser.add_argument("--scene", help="SceneSpec JSON or bundle manifest.json")
    optimize_parser.add_argument("--loss-config", help="Loss config JSON")
    optimize_parser.add_argument("--optimizer-config", help="Optimizer config JSON")
    optimize_parser.add_argument("--out", help="Output depth PFM")
    optimize_parser.add_argument("--trace", help="Output trace JSON")
    optimize_parser.add_argument("--seed", type=int, help="Random seed (default from config)")
    optimize_parser.add_argument("--manifest", help="Experiment manifest JSON to rerun")

    eval_depth = subparsers.add_parser("eval-depth", help="Depth metrics against ground truth")
    eval_depth.add_argument("--pred", required=True, help="Predicted depth PFM")
    eval_depth.add_argument("--gt", required=True, help="Ground-truth depth PFM")
    eval_depth.add_argument("--mask", help="Evaluation mask PGM")
    eval_depth.add_argument("--out", required=True, help="Report JSON")
    eval_depth.add_argument("--min-depth", type=float, help="Ignore ground truth below this depth")
    eval_depth.add_argument("--max-depth", type=float, help="Ignore ground truth above this depth")
    eval_depth.add_argument("--no-median-scaling", action="store_true", help="Evaluate unscaled depth")

    flow_check = subparsers.add_parser("flow-check", help="Cross-check rigid flow and occlusion oracles")
    flow_check.add_argument("--scene", required=True, help="SceneSpec JSON or bundle manifest.json")
    flow_check.add_argument("--flow", help="External .flo to compare against the first view's ground truth")
    flow_check.add_argument("--tolerance", type=float, default=DEFAULT_FLOW_TOLERANCE, help="Max endpoint error (px)")
    flow_check.add_argument("--out", help="Report JSON")

    gradcheck = subparsers.add_parser("gradcheck", help="Finite-difference checks of the loss gradients")
    gradcheck.add_argument("--term", choices=("all",) + GRADCHECK_TERMS, default="all")
    gradcheck.add_argument("--samples", type=int, default=100, help="Random states per term")
    gradcheck.add_argument("--seed", type=int, help="Random seed (default from config)")
    gradcheck.add_argument("--out", help="Report JSON")

    args = parser.parse_args(argv)
    if args.command == "optimize" and not args.manifest:
        missing = [flag for flag, value in (("--scene", args.scene), ("--loss-config", args.loss_config),
                                            ("--out", args.out), ("--trace", args.trace)) if not value]
        if missing:
            optimize_parser.error(f"the following arguments are required without --manifest: {', '.join(missing)}")
    return args


def _arguments(args: argparse.Namespace) -> dict[str, Any]:
    return {key: value for key, value in vars(args).items() if key != "command"}


def _loss_options(path: str | None, overrides: dict[str, Any] | None = None) -> LossConfig:
    data = dict(overrides or {})
    if path:
        data.update(read_json(path))
    return LossConfig.from_dict(data)


def _emit(report: dict[str, Any], out: str | None) -> None:
    if out:
        write_json(out, report)
    print(json.dumps(report, indent=2, sort_keys=True))


def run_synth(args: argparse.Namespace) -> int:
    if args.spec:
        spec = SceneSpec.from_dict(read_json(args.spec))
        if args.seed is not None:
            spec.seed = args.seed
    else:
        seed = config.seed if args.seed is None else args.seed
        spec = preset_scene(args.preset, args.height, args.width, seed)
    scene = render(spec)
    manifest_path = save_scene(scene, args.out)
    summary = summarize(scene)
    logger.info("Scene summary: %s", summary.to_dict())
    write_provenance(args.out, build_provenance("synth", _arguments(args), spec.to_dict(), spec.seed))
    print(manifest_path)
    return 0


def _read_poses(path: str, count: int) -> list[PoseSE3]:
    data = read_json(path)
    items = data if isinstance(data, list) else [data]
    if len(items) != count:
        raise ConfigError(f"{len(items)} poses given for {count} source views")
    return [PoseSE3.from_dict(item) for item in items]


def run_loss_eval(args: argparse.Namespace) -> int:
    scene = load_scene(args.scene)
    options = _loss_options(args.loss_config)
    depth = read_depth(args.depth) if args.depth else scene.depth
    if not np.all(depth.valid):
        raise GeometryError("loss evaluation needs a depth map positive everywhere")
    poses = _read_poses(args.pose, len(scene.views)) if args.pose else [view.pose for view in scene.views]

    objective = DepthObjective(scene_frames(scene), scene.spec.K, supervision_flows(scene), options)
    objective.refit_planes(np.log(depth.values))
    depth_breakdown = objective.evaluate(np.log(depth.values), poses, with_gradient=False).breakdown

    first = scene.views[0]
    flow_breakdown, _, _ = flow_objective(
        scene.target, first.image, first.flow, objective.patches, options, first.visible
    )
    provenance = build_provenance("loss-eval", _arguments(args), options.to_dict(), config.seed)
    report = {
        "depth": depth_breakdown.to_dict(),
        "flow": flow_breakdown.to_dict(),
        "keypoints": len(objective.patches),
        "provenance": provenance,
    }
    logger.info("Depth loss %.6g, flow loss %.6g", depth_breakdown.total, flow_breakdown.total)
    if args.out:
        write_provenance(args.out, provenance)
    _emit(report, args.out)
    return 0


def run_optimize(args: argparse.Namespace) -> int:
    if args.manifest:
        manifest = ExperimentManifest.load(args.manifest)
    else:
        manifest = ExperimentManifest(
            scene=os.path.abspath(args.scene),
            loss_config=dict(read_json(args.loss_config)),
            optimizer_config=dict(read_json(args.optimizer_config)) if args.optimizer_config else {},
            seed=config.seed,
        )
    if args.seed is not None:
        manifest.seed = args.seed
    depth_path = args.out or manifest.outputs.get("depth")
    trace_path = args.trace or manifest.outputs.get("trace")
    if not depth_path or not trace_path:
        raise ConfigError("depth and trace output paths are required")
    manifest.outputs = {"depth": os.path.abspath(depth_path), "trace": os.path.abspath(trace_path)}

    loss_options = _loss_options(None, manifest.loss_config)
    options = OptimizerConfig.from_dict(manifest.optimizer_config)
    scene = manifest.load_scene()
    init_poses = (
        [view.pose for view in scene.views]
        if options.pose_mode == "fixed"
        else [PoseSE3.identity() for _ in scene.views]
    )
    result = optimize(
        scene_frames(scene),
        scene.spec.K,
        supervision_flows(scene),
        options,
        loss_options,
        init_poses=init_poses,
        depth_prior=scene.mean_depth,
        seed=manifest.seed,
    )

    report = compute_metrics(median_scale(result.depth, scene.depth), scene.depth)
    trace = result.to_trace_dict()
    trace["evaluation"] = report.to_dict()
    write_depth(depth_path, result.depth)
    write_json(trace_path, trace)
    manifest.save(f"{depth_path}.manifest.json")
    settings = {"loss": loss_options.to_dict(), "optimizer": options.to_dict()}
    write_provenance(depth_path, build_provenance("optimize", _arguments(args), settings, manifest.seed))
    logger.info(
        "Optimization %s after %d iterations: abs_rel %.4f, rms %.4f",
        result.status, result.iterations, report.abs_rel, report.rms,
    )
    return 0


def run_eval_depth(args: argparse.Namespace) -> int:
    prediction = read_depth(args.pred)
    reference = read_depth(args.gt)
    mask = read_mask(args.mask) if args.mask else None
    report = evaluate_depth(
        prediction,
        reference,
        mask,
        median_scaling=not args.no_median_scaling,
        min_depth=args.min_depth,
        max_depth=args.max_depth,
    )
    settings = {
        "median_scaling": not args.no_median_scaling,
        "min_depth": args.min_depth,
        "max_depth": args.max_depth,
    }
    write_provenance(args.out, build_provenance("eval-depth", _arguments(args), settings, config.seed))
    _emit(report.to_dict(), args.out)
    return 0


def run_flow_check(args: argparse.Namespace) -> int:
    scene = load_scene(args.scene)
    K = scene.spec.K
    views = []
    passed = True
    for index, view in enumerate(scene.views):
        rigid = flow_endpoint_error(rigid_flow(scene.depth, view.pose, K), view.flow, view.visible)
        detected = occlusion_mask(view.flow, view.backward_flow)
        iou = mask_iou(~detected, view.occlusion | view.out_of_view)
        passed &= rigid.max_epe < args.tolerance
        views.append({"view": index, "rigid_flow": rigid.to_dict(), "occlusion_iou": iou})
        logger.info("View %d: rigid flow max EPE %.3g px, occlusion IoU %.3f", index, rigid.max_epe, iou)

    report: dict[str, Any] = {"views": views, "tolerance": args.tolerance}
    if args.flow:
        external = flow_endpoint_error(read_flo(args.flow), scene.flow, scene.views[0].visible)
        report["external_flow"] = external.to_dict()
        passed &= external.max_epe < args.tolerance
    report["passed"] = bool(passed)
    report["provenance"] = build_provenance("flow-check", _arguments(args), {"tolerance": args.tolerance}, config.seed)
    _emit(report, args.out)
    if not passed:
        logger.error("Flow check failed: endpoint error above %.3g px", args.tolerance)
        print(f"error: flow check failed (tolerance {args.tolerance} px)", file=sys.stderr)
        return 1
    return 0


def run_gradcheck(args: argparse.Namespace) -> int:
    seed = config.seed if args.seed is None else args.seed
    if args.term == "all":
        results = check_all(args.samples, seed)
    else:
        results = [check_term(args.term, args.samples, seed)]
    report = {
        "results": [result.to_dict() for result in results],
        "passed": all(result.passed for result in results),
        "provenance": build_provenance("gradcheck", _arguments(args), {"samples": args.samples}, seed),
    }
    _emit(report, args.out)
    failed = [result.term for result in results if not result.passed]
    if failed:
        logger.error("Gradient check failed for: %s", ", ".join(failed))
        print(f"error: gradient check failed for {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "synth": run_synth,
    "loss-eval": run_loss_eval,
    "optimize": run_optimize,
    "eval-depth": run_eval_depth,
    "flow-check": run_flow_check,
    "gradcheck": run_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    """Main execution function."""
    args = parse_arguments(argv)

    logger.info(
        "Depth Supervision Toolkit Version: %s - Run Timestamp: %s",
        config.app_version,
        datetime.now().isoformat(),
    )
    logger.info("Command: %s, seed %d, threads %d, config %s",
                args.command, config.seed, config.num_threads, config.config_path)

    try:
        return COMMANDS[args.command](args)
    except DepthSupError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
