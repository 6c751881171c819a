"""Per-frame detection pipeline and batch dataset runner.

For every 2D detection: extract its frustum points, rotate to the frustum
frame, estimate the centroid by histogram clustering, and route by the
per-class faraway depth threshold. Faraway objects get a regressed 3D box
anchored at the clustered centroid; near-range objects are left to an
external detector whose result files are merged in as fallback boxes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import regressor
from .clustering import DEFAULT_BIN_WIDTH, estimate_centroid
from .errors import (
    ConfigError,
    EmptyCluster,
    MissingFrameData,
    NonFiniteBox,
    UnknownClass,
)
from .geometry import (
    FrustumContext,
    bev_project,
    frustum_rotation,
    points_in_box_frustum,
    points_in_mask_frustum,
    rot_y,
    to_centroid_frame,
)
from .kitti_io import (
    Box3D,
    CalibrationSet,
    Detection2D,
    LabelRecord,
    PointCloud,
    load_pointcloud,
    parse_calibration,
    parse_detections,
    parse_labels,
    wrap_angle,
    write_results,
)
from .regressor import BoxRegression, RegressorParams, rasterize_bev

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS: dict[str, float] = {"pedestrian": 60.0, "car": 75.0}
DEFAULT_IMAGE_SIZE: tuple[int, int] = (1242, 375)


@dataclass
class PipelineConfig:
    """Tunable pipeline settings; see from_mapping for the file key names."""

    data_root: Path = Path(".")
    out_dir: Path | None = None
    thresholds: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_THRESHOLDS)
    )
    frustum_mode: str = "mask"           # "mask" or "box"
    bin_width: float = DEFAULT_BIN_WIDTH
    raster_grid: int = 32
    raster_extent: float = 4.0
    min_frustum_points: int = 1
    checkpoint: Path | None = None
    classes: tuple[str, ...] = regressor.DEFAULT_CLASSES
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    size_priors: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(regressor.DEFAULT_SIZE_PRIORS)
    )

    def __post_init__(self) -> None:
        self.data_root = Path(self.data_root)
        self.out_dir = Path(self.out_dir) if self.out_dir is not None else None
        self.checkpoint = Path(self.checkpoint) if self.checkpoint is not None else None
        if self.frustum_mode not in ("mask", "box"):
            raise ConfigError(f"frustum_mode must be mask or box, got {self.frustum_mode!r}")
        if any(t <= 0 for t in self.thresholds.values()):
            raise ConfigError("faraway thresholds must be positive")
        if self.min_frustum_points < 1:
            raise ConfigError("min_frustum_points must be >= 1")
        if self.raster_grid < 1 or self.raster_extent <= 0 or self.bin_width <= 0:
            raise ConfigError("raster_grid, raster_extent, bin_width must be positive")

    @property
    def results_dir(self) -> Path:
        return self.out_dir if self.out_dir is not None else self.data_root / "results"

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "PipelineConfig":
        """Build a config from flat key=value pairs (file or CLI overrides).

        Recognized keys: data_root, out, frustum_mode, bin_width, raster_grid,
        raster_extent, min_frustum_points, checkpoint, image_width,
        image_height, classes (comma list), threshold.<class>, prior.<class>
        (three comma-separated meters).
        """
        cfg = cls()
        for key, value in mapping.items():
            try:
                if key == "data_root":
                    cfg.data_root = Path(value)
                elif key == "out":
                    cfg.out_dir = Path(value)
                elif key == "frustum_mode":
                    cfg.frustum_mode = value
                elif key == "bin_width":
                    cfg.bin_width = float(value)
                elif key == "raster_grid":
                    cfg.raster_grid = int(value)
                elif key == "raster_extent":
                    cfg.raster_extent = float(value)
                elif key == "min_frustum_points":
                    cfg.min_frustum_points = int(value)
                elif key == "checkpoint":
                    cfg.checkpoint = Path(value)
                elif key == "image_width":
                    cfg.image_size = (int(value), cfg.image_size[1])
                elif key == "image_height":
                    cfg.image_size = (cfg.image_size[0], int(value))
                elif key == "classes":
                    cfg.classes = tuple(
                        name.strip().lower() for name in value.split(",") if name.strip()
                    )
                elif key.startswith("threshold."):
                    cfg.thresholds[key.split(".", 1)[1].lower()] = float(value)
                elif key.startswith("prior."):
                    parts = [float(v) for v in value.split(",")]
                    if len(parts) != 3:
                        raise ValueError("prior needs exactly three values (w,l,h)")
                    cfg.size_priors[key.split(".", 1)[1].lower()] = tuple(parts)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
        cfg.__post_init__()
        return cfg


def parse_config_text(text: str) -> dict[str, str]:
    """Parse a flat key=value config file; '#' starts a comment line."""
    out: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(
    path: str | Path | None = None, overrides: Mapping[str, str] | None = None
) -> PipelineConfig:
    """Defaults, then the config file, then overrides (highest precedence)."""
    mapping: dict[str, str] = {}
    if path is not None:
        mapping.update(parse_config_text(Path(path).read_text()))
    if overrides:
        mapping.update(overrides)
    return PipelineConfig.from_mapping(mapping)


def is_faraway(depth: float, class_name: str, thresholds: Mapping[str, float]) -> bool:
    """True iff depth >= the class threshold (inclusive boundary)."""
    if class_name not in thresholds:
        raise UnknownClass(f"no faraway threshold for class {class_name!r}")
    return depth >= thresholds[class_name]


def assemble_box(
    centroid: tuple[float, float, float],
    reg: BoxRegression,
    theta: float,
    class_name: str,
    score: float,
) -> Box3D:
    """Combine centroid, regression, and frustum angle into a camera-frame box.

    Only the depth component of the regressed shift is applied; the lateral
    and vertical positions come from the clustered centroid. The center is
    rotated back by +theta and the yaw converted to the camera frame.
    """
    vals = (*centroid, *reg.shift, *reg.size, reg.yaw, theta, score)
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteBox(f"non-finite box assembly inputs {vals}")
    center_frustum = np.array([centroid[0], centroid[1], centroid[2] + reg.shift[2]])
    center_cam = rot_y(theta) @ center_frustum
    return Box3D(
        center=(center_cam[0], center_cam[1], center_cam[2]),
        yaw=wrap_angle(reg.yaw + theta),
        size=reg.size,
        class_name=class_name,
        score=score,
    )


@dataclass
class RunSummary:
    """Counters accumulated over a run."""

    frames: int = 0
    detections: int = 0
    faraway: int = 0
    skipped_empty_frustum: int = 0
    skipped_unknown_class: int = 0
    fallback_seen: int = 0
    fallback_kept: int = 0

    def lines(self) -> list[str]:
        return [
            f"frames processed:        {self.frames}",
            f"2d detections seen:      {self.detections}",
            f"faraway boxes emitted:   {self.faraway}",
            f"skipped empty frustums:  {self.skipped_empty_frustum}",
            f"skipped unknown classes: {self.skipped_unknown_class}",
            f"fallback boxes kept:     {self.fallback_kept}/{self.fallback_seen}",
        ]


def _extract_frustum(
    cloud: PointCloud, det: Detection2D, calib: CalibrationSet, mode: str
) -> PointCloud:
    if mode == "mask" and det.mask is not None:
        return points_in_mask_frustum(cloud, det, calib)
    return points_in_box_frustum(cloud, det, calib)


def process_frame(
    cloud: PointCloud,
    detections: Sequence[Detection2D],
    fallback_boxes: Sequence[Box3D],
    calib: CalibrationSet,
    config: PipelineConfig,
    params: RegressorParams | None = None,
    stats: RunSummary | None = None,
) -> list[Box3D]:
    """Run the faraway branch over all detections and merge with fallback.

    Detections whose frustum holds fewer than min_frustum_points points, or
    whose class has no threshold/prior, are skipped (counted, never fatal).
    Fallback boxes survive only when their own center depth is below their
    class threshold; classes without a threshold are kept unconditionally.
    The merged list is sorted by descending score, stable on input order
    (fallback first, then faraway boxes in detection order).
    """
    stats = stats if stats is not None else RunSummary()
    ours: list[Box3D] = []
    for det in detections:
        stats.detections += 1
        try:
            frustum = _extract_frustum(cloud, det, calib, config.frustum_mode)
            if len(frustum) < config.min_frustum_points:
                stats.skipped_empty_frustum += 1
                continue
            rotated, theta = frustum_rotation(frustum, det, calib)
            ctx = FrustumContext(
                rotation_angle=theta,
                centroid=estimate_centroid(rotated, config.bin_width),
                source_detection=det,
            )
            if not is_faraway(ctx.centroid[2], det.class_name, config.thresholds):
                continue  # near range: the fallback detector owns it
            bev = bev_project(to_centroid_frame(rotated, ctx.centroid))
            raster = rasterize_bev(
                bev, det.class_name, config.raster_grid, config.raster_extent,
                classes=config.classes,
            )
            if params is not None:
                reg = regressor.forward(params, raster)
            else:
                reg = regressor.prior_regress(raster, config.size_priors)
            ours.append(
                assemble_box(ctx.centroid, reg, ctx.rotation_angle,
                             det.class_name, det.score)
            )
            stats.faraway += 1
        except UnknownClass:
            stats.skipped_unknown_class += 1
        except EmptyCluster:
            stats.skipped_empty_frustum += 1

    kept: list[Box3D] = []
    for box in fallback_boxes:
        stats.fallback_seen += 1
        threshold = config.thresholds.get(box.class_name)
        if threshold is None or box.center[2] < threshold:
            kept.append(box)
            stats.fallback_kept += 1

    merged = kept + ours
    order = sorted(range(len(merged)), key=lambda i: (-merged[i].score, i))
    return [merged[i] for i in order]


# --- dataset layout -----------------------------------------------------------
#
# <root>/velodyne/<frame>.bin      float32 LE scans           (required)
# <root>/calib/<frame>.txt         calibration                (required)
# <root>/detections_2d/<frame>.txt 2D detections (+ masks/)   (required)
# <root>/fallback/<frame>.txt      near-range result files    (required when
#                                  the fallback/ directory exists)
# <root>/label_2/<frame>.txt       ground truth               (optional)

@dataclass
class FrameInputs:
    frame_id: str
    cloud: PointCloud
    detections: list[Detection2D]
    fallback_boxes: list[Box3D]
    calib: CalibrationSet
    labels: list[LabelRecord] | None


def _required(path: Path) -> Path:
    if not path.is_file():
        raise MissingFrameData(f"missing input file: {path}")
    return path


def load_frame_inputs(
    root: str | Path, frame_id: str, config: PipelineConfig
) -> FrameInputs:
    """Read one frame's files from the standard layout."""
    root = Path(root)
    cloud = load_pointcloud(_required(root / "velodyne" / f"{frame_id}.bin").read_bytes())
    calib = parse_calibration(
        _required(root / "calib" / f"{frame_id}.txt").read_text(), frame_id
    )
    det_dir = root / "detections_2d"
    detections = parse_detections(
        _required(det_dir / f"{frame_id}.txt").read_text(),
        config.image_size,
        mask_dir=det_dir,
    )
    fallback_boxes: list[Box3D] = []
    fallback_dir = root / "fallback"
    if fallback_dir.is_dir():
        text = _required(fallback_dir / f"{frame_id}.txt").read_text()
        fallback_boxes = [
            rec.box for rec in parse_labels(text) if rec.box is not None
        ]
    labels = None
    label_path = root / "label_2" / f"{frame_id}.txt"
    if label_path.is_file():
        labels = parse_labels(label_path.read_text())
    return FrameInputs(frame_id, cloud, detections, fallback_boxes, calib, labels)


def run_dataset(
    frames: Sequence[str],
    config: PipelineConfig,
    params: RegressorParams | None = None,
) -> RunSummary:
    """Process frames sequentially and write one result file per frame."""
    out_dir = config.results_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = RunSummary()
    for frame_id in frames:
        inputs = load_frame_inputs(config.data_root, frame_id, config)
        boxes = process_frame(
            inputs.cloud,
            inputs.detections,
            inputs.fallback_boxes,
            inputs.calib,
            config,
            params=params,
            stats=summary,
        )
        text = write_results(boxes, inputs.calib, config.image_size)
        (out_dir / f"{frame_id}.txt").write_text(text)
        summary.frames += 1
    return summary
