"""Command-line entry points: run, train, eval, stats, plot.

Exit codes: 0 success, 1 runtime error (diagnostic on stderr naming the
failing path/frame), 2 usage error. Configuration precedence per key is
built-in default < config file < key=value override on the command line.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import evaluation, plots, regressor
from .errors import FarFrustumError
from .geometry import lidar_to_camera
from .kitti_io import parse_labels
from .pipeline import PipelineConfig, load_config, load_frame_inputs, run_dataset
from .regressor import TrainConfig, build_training_set


class UsageError(Exception):
    """Bad command-line input; maps to exit status 2 like argparse errors."""


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"override must be key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = _parse_overrides(args.overrides)
    if getattr(args, "frustum_mode", None):
        overrides["frustum_mode"] = args.frustum_mode
    if getattr(args, "out", None):
        overrides["out"] = args.out
    if args.config is not None and not Path(args.config).is_file():
        raise FarFrustumError(f"config file not found: {args.config}")
    return load_config(args.config, overrides)


def _frame_list(args: argparse.Namespace, config: PipelineConfig) -> list[str]:
    if args.frames:
        path = Path(args.frames)
        if path.is_file():
            return [line.strip() for line in path.read_text().splitlines() if line.strip()]
        return [f.strip() for f in args.frames.split(",") if f.strip()]
    velo = config.data_root / "velodyne"
    if not velo.is_dir():
        raise FarFrustumError(f"no frame list given and no velodyne dir at {velo}")
    return sorted(p.stem for p in velo.glob("*.bin"))


def _load_params(config: PipelineConfig) -> regressor.RegressorParams | None:
    if config.checkpoint is None:
        return None
    if not config.checkpoint.is_file():
        raise FarFrustumError(f"checkpoint not found: {config.checkpoint}")
    return regressor.load_checkpoint(config.checkpoint, config.classes)


def cmd_run(args: argparse.Namespace) -> int:
    config = _build_config(args)
    frames = _frame_list(args, config)
    summary = run_dataset(frames, config, params=_load_params(config))
    for line in summary.lines():
        print(line)
    print(f"results written to: {config.results_dir}")
    return 0


def _load_gt_frames(config: PipelineConfig, frames: list[str]):
    label_dir = config.data_root / "label_2"
    if not label_dir.is_dir():
        raise FarFrustumError(f"label directory missing: {label_dir}")
    out = {}
    for frame_id in frames:
        path = label_dir / f"{frame_id}.txt"
        if path.is_file():
            out[frame_id] = parse_labels(path.read_text())
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    config = _build_config(args)
    results_dir = Path(args.results) if args.results else config.results_dir
    frames = _frame_list(args, config)
    labels = _load_gt_frames(config, frames)
    gt_by_frame = {
        f: [rec.box for rec in recs if not rec.dontcare and rec.box is not None]
        for f, recs in labels.items()
    }
    preds_by_frame = {}
    for frame_id in gt_by_frame:
        path = results_dir / f"{frame_id}.txt"
        if path.is_file():
            preds_by_frame[frame_id] = [
                rec.box for rec in parse_labels(path.read_text()) if rec.box is not None
            ]
        else:
            preds_by_frame[frame_id] = []
    faraway = (
        evaluation.faraway_filter(config.thresholds) if args.faraway_only else None
    )
    report = evaluation.evaluate_boxes(
        gt_by_frame, preds_by_frame, iou_threshold=args.iou, faraway=faraway
    )
    print(evaluation.format_report(report))
    if args.machine:
        for line in evaluation.machine_lines(report):
            print(line)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    config = _build_config(args)
    frames = _frame_list(args, config)
    labels = _load_gt_frames(config, frames)
    clouds, calibs = {}, {}
    for frame_id in labels:
        inputs = load_frame_inputs(config.data_root, frame_id, config)
        clouds[frame_id] = inputs.cloud
        calibs[frame_id] = inputs.calib
    stats = evaluation.points_per_object_stats(labels, clouds, calibs)
    print(f"{'frame':<10} {'class':<12} {'depth_m':>8} {'points':>7}")
    for s in stats:
        print(f"{s.frame_id:<10} {s.class_name:<12} {s.depth:>8.2f} {s.count:>7}")
    if args.out:
        plots.write_text(args.out, plots.stats_scatter_svg(stats))
        print(f"scatter written to: {args.out}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    config = _build_config(args)
    inputs = load_frame_inputs(config.data_root, args.frame, config)
    cam = lidar_to_camera(inputs.cloud, inputs.calib)
    points_xz = cam.points[:, [0, 2]]
    gt_boxes = []
    if inputs.labels:
        gt_boxes = [
            rec.box for rec in inputs.labels if not rec.dontcare and rec.box is not None
        ]
    pred_boxes = []
    results_dir = Path(args.results) if args.results else config.results_dir
    result_path = results_dir / f"{args.frame}.txt"
    if result_path.is_file():
        pred_boxes = [
            rec.box for rec in parse_labels(result_path.read_text())
            if rec.box is not None
        ]
    out = Path(args.plot_out)
    plots.write_text(out, plots.bev_scene_svg(points_xz, gt_boxes, pred_boxes))
    print(f"plot written to: {out}")
    if args.ppm:
        plots.write_bytes(args.ppm, plots.bev_scene_ppm(points_xz, gt_boxes, pred_boxes))
        print(f"ppm written to: {args.ppm}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _build_config(args)
    frames = _frame_list(args, config)
    labels = _load_gt_frames(config, frames)
    clouds, detections, calibs = {}, {}, {}
    for frame_id in labels:
        inputs = load_frame_inputs(config.data_root, frame_id, config)
        clouds[frame_id] = inputs.cloud
        detections[frame_id] = inputs.detections
        calibs[frame_id] = inputs.calib
    priors = regressor.compute_size_priors(
        rec for recs in labels.values() for rec in recs
    )
    for name in config.classes:
        priors.setdefault(name, config.size_priors.get(name, (1.0, 1.0, 1.0)))
    samples, skipped = build_training_set(clouds, detections, labels, calibs, config)
    if not samples:
        raise FarFrustumError("no training samples could be built from the dataset")
    hyper = TrainConfig(
        hidden=args.hidden,
        learning_rate=args.lr,
        epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
    )
    params = regressor.train(samples, hyper, priors=priors)
    out = Path(args.out) if args.out else (
        config.checkpoint if config.checkpoint else config.data_root / "regressor.ckpt"
    )
    regressor.save_checkpoint(params, out)
    final = regressor.mean_loss(params, samples)
    print(f"samples: {len(samples)} (skipped {skipped})")
    print(f"final training loss: {final:.4f}")
    print(f"checkpoint written to: {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="farfrustum",
        description="faraway-object 3D/BEV detection over KITTI-format data",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--frames", help="comma-separated frame ids or a list file")
        p.add_argument(
            "overrides", nargs="*", metavar="key=value",
            help="config overrides, e.g. threshold.pedestrian=50",
        )

    p_run = sub.add_parser("run", help="run the detection pipeline over frames")
    common(p_run)
    p_run.add_argument("--frustum-mode", choices=("mask", "box"))
    p_run.add_argument("--out", help="results directory")
    p_run.set_defaults(func=cmd_run)

    p_train = sub.add_parser("train", help="fit the box regressor on labeled frames")
    common(p_train)
    p_train.add_argument("--frustum-mode", choices=("mask", "box"))
    p_train.add_argument("--out", help="checkpoint output path")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--hidden", type=int, default=64)
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--epochs", type=int, default=500)
    p_train.add_argument("--patience", type=int, default=10)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score result files against labels")
    common(p_eval)
    p_eval.add_argument("--results", help="directory of result files")
    p_eval.add_argument("--iou", type=float, default=0.1)
    p_eval.add_argument("--faraway-only", action="store_true")
    p_eval.add_argument("--machine", action="store_true",
                        help="also print class,metric,value lines")
    p_eval.set_defaults(func=cmd_eval)

    p_stats = sub.add_parser("stats", help="per-object point counts vs depth")
    common(p_stats)
    p_stats.add_argument("--out", help="optional scatter SVG path")
    p_stats.set_defaults(func=cmd_stats)

    p_plot = sub.add_parser("plot", help="BEV render of one frame")
    common(p_plot)
    p_plot.add_argument("--frame", required=True)
    p_plot.add_argument("--results", help="directory of result files to overlay")
    p_plot.add_argument("--out", dest="plot_out", required=True, help="SVG path")
    p_plot.add_argument("--ppm", help="optional binary PPM path")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FarFrustumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:  # pragma: no cover - console-script shim
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
