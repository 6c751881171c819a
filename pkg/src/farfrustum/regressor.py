"""Box regressor for faraway objects.

Consumes the class id plus a BEV occupancy raster of the centroid-frame
frustum points and regresses a 7-vector: centroid-to-box-center shift
(dx, dy, dz), box size (w, l, h), and yaw in the frustum frame. Faraway
frustums hold around ten points, so a two-layer tanh network over a G x G
count grid is enough capacity; sizes are emitted as prior * exp(raw) so
positivity is structural. Training minimizes the unweighted sum of the
seven per-output mean-absolute errors with Adam and early stopping. At
assembly time only dz, size, and yaw are consumed; dx and dy are trained
but discarded in favor of the clustered centroid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyDataset, ShapeError, UnknownClass
from .kitti_io import LabelRecord, PointCloud, wrap_angle

if TYPE_CHECKING:  # pragma: no cover
    from .kitti_io import CalibrationSet, Detection2D
    from .pipeline import PipelineConfig

logger = logging.getLogger(__name__)

DEFAULT_CLASSES: tuple[str, ...] = ("pedestrian", "car")
# Per-class mean (w, l, h) over common KITTI training labels; overridable
# via compute_size_priors on any label set.
DEFAULT_SIZE_PRIORS: dict[str, tuple[float, float, float]] = {
    "pedestrian": (0.66, 0.84, 1.76),
    "car": (1.63, 3.88, 1.53),
}

CHECKPOINT_VERSION = 1
_OUTPUT_DIM = 7


@dataclass(frozen=True)
class BevRaster:
    """G x G BEV point-count grid plus the object's class, network-ready."""

    grid: np.ndarray                 # (G, G) int64, row i bins x, column j bins z
    extent: float                    # grid spans [-extent, extent] on both axes
    class_name: str
    classes: tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=np.int64, copy=True)
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1] or grid.shape[0] < 1:
            raise ShapeError(f"raster grid must be square, got {grid.shape}")
        if not self.extent > 0:
            raise ValueError(f"raster extent must be positive, got {self.extent}")
        if self.class_name not in self.classes:
            raise UnknownClass(f"{self.class_name!r} not in {self.classes}")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def grid_size(self) -> int:
        return self.grid.shape[0]

    @property
    def class_onehot(self) -> np.ndarray:
        onehot = np.zeros(len(self.classes))
        onehot[self.classes.index(self.class_name)] = 1.0
        return onehot

    def feature_vector(self) -> np.ndarray:
        """Flattened grid followed by the class one-hot."""
        return np.concatenate([self.grid.ravel().astype(np.float64), self.class_onehot])


def rasterize_bev(
    points: np.ndarray,
    class_name: str,
    grid_size: int,
    extent: float,
    classes: tuple[str, ...] = DEFAULT_CLASSES,
) -> BevRaster:
    """Count (x, z) points into a G x G grid over [-extent, extent)^2.

    Cell (i, j) covers x in [-R + i*2R/G, -R + (i+1)*2R/G) and likewise z;
    points outside the extent are dropped.
    """
    if grid_size < 1:
        raise ValueError(f"grid_size must be >= 1, got {grid_size}")
    if not extent > 0:
        raise ValueError(f"extent must be positive, got {extent}")
    if class_name not in classes:
        raise UnknownClass(f"{class_name!r} not in {classes}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    cell = 2.0 * extent / grid_size
    grid = np.zeros((grid_size, grid_size), dtype=np.int64)
    if pts.size:
        i = np.floor((pts[:, 0] + extent) / cell).astype(np.int64)
        j = np.floor((pts[:, 1] + extent) / cell).astype(np.int64)
        keep = (i >= 0) & (i < grid_size) & (j >= 0) & (j < grid_size)
        np.add.at(grid, (i[keep], j[keep]), 1)
    return BevRaster(grid=grid, extent=extent, class_name=class_name, classes=classes)


@dataclass(frozen=True)
class BoxRegression:
    """Regressor output: centroid shift, box size, and frustum-frame yaw."""

    shift: tuple[float, float, float]  # (dx, dy, dz) meters
    size: tuple[float, float, float]   # (w, l, h) meters
    yaw: float                         # radians, frustum frame

    def __post_init__(self) -> None:
        vals = (*self.shift, *self.size, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite regression {vals}")
        object.__setattr__(self, "shift", tuple(float(v) for v in self.shift))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "yaw", float(self.yaw))

    def as_vector(self) -> np.ndarray:
        """(7,) target layout: dx dy dz w l h yaw."""
        return np.array([*self.shift, *self.size, self.yaw], dtype=np.float64)


@dataclass
class RegressorParams:
    """Weights of the two-layer network plus per-class size priors."""

    classes: tuple[str, ...]
    grid_size: int
    w1: np.ndarray       # (hidden, input)
    b1: np.ndarray       # (hidden,)
    w2: np.ndarray       # (7, hidden)
    b2: np.ndarray       # (7,)
    priors: np.ndarray   # (n_classes, 3) mean (w, l, h) per class

    @property
    def input_dim(self) -> int:
        return self.grid_size * self.grid_size + len(self.classes)

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "RegressorParams":
        return RegressorParams(
            classes=self.classes,
            grid_size=self.grid_size,
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
            priors=self.priors.copy(),
        )

    def prior_for(self, class_name: str) -> np.ndarray:
        if class_name not in self.classes:
            raise UnknownClass(f"{class_name!r} not in {self.classes}")
        return self.priors[self.classes.index(class_name)]


def _priors_matrix(
    classes: Sequence[str], priors: Mapping[str, Sequence[float]]
) -> np.ndarray:
    rows = []
    for name in classes:
        if name not in priors:
            raise UnknownClass(f"no size prior for class {name!r}")
        rows.append([float(v) for v in priors[name]])
    return np.array(rows, dtype=np.float64).reshape(len(classes), 3)


def zero_params(
    grid_size: int,
    classes: tuple[str, ...] = DEFAULT_CLASSES,
    hidden: int = 64,
    priors: Mapping[str, Sequence[float]] = DEFAULT_SIZE_PRIORS,
) -> RegressorParams:
    """All-zero weights: forward returns zero shift, prior sizes, zero yaw."""
    d = grid_size * grid_size + len(classes)
    return RegressorParams(
        classes=tuple(classes),
        grid_size=grid_size,
        w1=np.zeros((hidden, d)),
        b1=np.zeros(hidden),
        w2=np.zeros((_OUTPUT_DIM, hidden)),
        b2=np.zeros(_OUTPUT_DIM),
        priors=_priors_matrix(classes, priors),
    )


def init_params(
    grid_size: int,
    classes: tuple[str, ...] = DEFAULT_CLASSES,
    hidden: int = 64,
    priors: Mapping[str, Sequence[float]] = DEFAULT_SIZE_PRIORS,
    seed: int = 0,
) -> RegressorParams:
    """Small random initialization, deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    d = grid_size * grid_size + len(classes)
    params = zero_params(grid_size, classes, hidden, priors)
    params.w1 = rng.normal(0.0, 1.0 / math.sqrt(d), size=(hidden, d))
    params.w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(_OUTPUT_DIM, hidden))
    return params


def _forward_batch(params: RegressorParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hidden activations and raw outputs for a (N, input_dim) batch."""
    hidden = np.tanh(x @ params.w1.T + params.b1)
    raw = hidden @ params.w2.T + params.b2
    return hidden, raw


def forward(params: RegressorParams, raster: BevRaster) -> BoxRegression:
    """Deterministic forward pass; sizes are prior * exp(raw)."""
    if raster.grid_size != params.grid_size or raster.classes != params.classes:
        raise ShapeError(
            f"raster (G={raster.grid_size}, classes={raster.classes}) does not "
            f"match params (G={params.grid_size}, classes={params.classes})"
        )
    x = raster.feature_vector()
    if x.shape[0] != params.input_dim:
        raise ShapeError(f"input dim {x.shape[0]} != expected {params.input_dim}")
    _, raw = _forward_batch(params, x[None, :])
    y = raw[0]
    prior = params.prior_for(raster.class_name)
    size = prior * np.exp(y[3:6])
    return BoxRegression(
        shift=(y[0], y[1], y[2]),
        size=(size[0], size[1], size[2]),
        yaw=wrap_angle(float(y[6])),
    )


def prior_regress(
    raster: BevRaster, priors: Mapping[str, Sequence[float]] = DEFAULT_SIZE_PRIORS
) -> BoxRegression:
    """Non-learned baseline: zero shift, class-prior size, zero yaw."""
    if raster.class_name not in priors:
        raise UnknownClass(f"no size prior for class {raster.class_name!r}")
    w, l, h = (float(v) for v in priors[raster.class_name])
    return BoxRegression(shift=(0.0, 0.0, 0.0), size=(w, l, h), yaw=0.0)


def mae_loss(pred: BoxRegression, target: BoxRegression) -> tuple[float, np.ndarray]:
    """Per-output absolute errors over (dx, dy, dz, w, l, h, yaw) and their sum.

    The yaw difference is wrapped into (-pi, pi] before taking the absolute
    value, so opposite-signed near-pi angles are close, not 2*pi apart.
    """
    diff = pred.as_vector() - target.as_vector()
    diff[6] = wrap_angle(diff[6])
    per_term = np.abs(diff)
    return float(per_term.sum()), per_term


def mean_loss(
    params: RegressorParams, dataset: Sequence[tuple[BevRaster, BoxRegression]]
) -> float:
    """Mean summed MAE over a dataset (the quantity train() minimizes)."""
    x, targets, priors = _design_matrices(params, dataset)
    return _batch_loss(params, x, targets, priors)[0]


def _design_matrices(
    params: RegressorParams, dataset: Sequence[tuple[BevRaster, BoxRegression]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not dataset:
        raise EmptyDataset("no training samples")
    xs, ts, ps = [], [], []
    for raster, target in dataset:
        if raster.grid_size != params.grid_size or raster.classes != params.classes:
            raise ShapeError("raster dimensions do not match the parameters")
        xs.append(raster.feature_vector())
        ts.append(target.as_vector())
        ps.append(params.prior_for(raster.class_name))
    return np.array(xs), np.array(ts), np.array(ps)


def _batch_loss(
    params: RegressorParams, x: np.ndarray, targets: np.ndarray, priors: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean loss plus the intermediates needed for backprop."""
    hidden, raw = _forward_batch(params, x)
    pred = raw.copy()
    pred[:, 3:6] = priors * np.exp(raw[:, 3:6])
    diff = pred - targets
    diff[:, 6] = np.array([wrap_angle(d) for d in diff[:, 6]])
    loss = float(np.abs(diff).sum(axis=1).mean())
    return loss, diff, hidden, pred


def loss_and_gradients(
    params: RegressorParams, dataset: Sequence[tuple[BevRaster, BoxRegression]]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean summed MAE over the dataset and its gradient in each tensor.

    MAE derivatives are sign functions; the exp size mapping contributes a
    factor of the predicted size itself, and the yaw wrap has unit slope
    almost everywhere.
    """
    x, targets, priors = _design_matrices(params, dataset)
    loss, diff, hidden, pred = _batch_loss(params, x, targets, priors)
    n = x.shape[0]
    d_raw = np.sign(diff) / n
    d_raw[:, 3:6] *= pred[:, 3:6]  # d size / d raw = prior * exp(raw) = pred size
    grad_w2 = d_raw.T @ hidden
    grad_b2 = d_raw.sum(axis=0)
    d_hidden = d_raw @ params.w2
    d_pre = d_hidden * (1.0 - hidden**2)
    grad_w1 = d_pre.T @ x
    grad_b1 = d_pre.sum(axis=0)
    grads = {"w1": grad_w1, "b1": grad_b1, "w2": grad_w2, "b2": grad_b2}
    return loss, grads


def flatten_params(params: RegressorParams) -> np.ndarray:
    """Weights as one flat vector, in (w1, b1, w2, b2) order."""
    return np.concatenate(
        [params.w1.ravel(), params.b1, params.w2.ravel(), params.b2]
    )


def with_flat_params(params: RegressorParams, flat: np.ndarray) -> RegressorParams:
    """New params object with weights taken from a flat vector."""
    out = params.copy()
    offset = 0
    for name in ("w1", "b1", "w2", "b2"):
        tensor = getattr(out, name)
        size = tensor.size
        setattr(out, name, flat[offset : offset + size].reshape(tensor.shape).copy())
        offset += size
    if offset != flat.size:
        raise ShapeError(f"flat vector has {flat.size} entries, expected {offset}")
    return out


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for train(); defaults fit desk-scale datasets."""

    hidden: int = 64
    learning_rate: float = 0.01
    epochs: int = 500
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0


def train(
    dataset: Sequence[tuple[BevRaster, BoxRegression]],
    hyper: TrainConfig = TrainConfig(),
    priors: Mapping[str, Sequence[float]] | None = None,
) -> RegressorParams:
    """Fit the regressor with full-batch Adam and early stopping.

    The dataset is split 90/10 into train/validation (all-train below five
    samples); the monitored loss is validation when available, else train.
    The best-seen parameters are restored at the end. Deterministic for a
    fixed seed: two runs yield bit-identical parameters.
    """
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    raster0 = dataset[0][0]
    prior_map = dict(priors) if priors is not None else dict(DEFAULT_SIZE_PRIORS)
    for name in raster0.classes:
        prior_map.setdefault(name, DEFAULT_SIZE_PRIORS.get(name, (1.0, 1.0, 1.0)))
    params = init_params(
        grid_size=raster0.grid_size,
        classes=raster0.classes,
        hidden=hyper.hidden,
        priors=prior_map,
        seed=hyper.seed,
    )

    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(len(dataset))
    n_val = int(len(dataset) * hyper.val_fraction) if len(dataset) >= 5 else 0
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    train_set = [dataset[i] for i in train_idx]
    val_set = [dataset[i] for i in val_idx]

    # Adam state, one slot per weight tensor.
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    moment1 = {k: np.zeros_like(getattr(params, k)) for k in ("w1", "b1", "w2", "b2")}
    moment2 = {k: np.zeros_like(v) for k, v in moment1.items()}

    best = params.copy()
    best_loss = math.inf
    stale = 0
    for step in range(1, hyper.epochs + 1):
        _, grads = loss_and_gradients(params, train_set)
        for key, grad in grads.items():
            moment1[key] = beta1 * moment1[key] + (1.0 - beta1) * grad
            moment2[key] = beta2 * moment2[key] + (1.0 - beta2) * grad**2
            m_hat = moment1[key] / (1.0 - beta1**step)
            v_hat = moment2[key] / (1.0 - beta2**step)
            tensor = getattr(params, key)
            setattr(
                params,
                key,
                tensor - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + eps),
            )
        monitored = mean_loss(params, val_set if val_set else train_set)
        if monitored < best_loss:
            best_loss = monitored
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale > hyper.patience:
                logger.debug("early stop at epoch %d (best %.6f)", step, best_loss)
                break
    return best


# --- checkpoint file --------------------------------------------------------
#
# Flat binary: five little-endian int64 (G, n_classes, hidden, 7, version),
# then float64 LE weights in (w1, b1, w2, b2) order, then n_classes*3
# float64 priors. Class-name order is not stored; it comes from the config.

def save_checkpoint(params: RegressorParams, path: str | Path) -> None:
    header = np.array(
        [params.grid_size, len(params.classes), params.hidden_dim,
         _OUTPUT_DIM, CHECKPOINT_VERSION],
        dtype="<i8",
    )
    body = np.concatenate(
        [flatten_params(params), params.priors.ravel()]
    ).astype("<f8")
    Path(path).write_bytes(header.tobytes() + body.tobytes())


def load_checkpoint(path: str | Path, classes: tuple[str, ...]) -> RegressorParams:
    data = Path(path).read_bytes()
    header = np.frombuffer(data, dtype="<i8", count=5)
    grid_size, n_classes, hidden, out_dim, version = (int(v) for v in header)
    if version != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    if out_dim != _OUTPUT_DIM:
        raise ShapeError(f"checkpoint output dim {out_dim} != {_OUTPUT_DIM}")
    if n_classes != len(classes):
        raise ShapeError(
            f"checkpoint has {n_classes} classes, config lists {len(classes)}"
        )
    d = grid_size * grid_size + n_classes
    n_weights = hidden * d + hidden + _OUTPUT_DIM * hidden + _OUTPUT_DIM
    body = np.frombuffer(data, dtype="<f8", offset=header.nbytes)
    if body.size != n_weights + n_classes * 3:
        raise ShapeError(
            f"checkpoint body has {body.size} reals, expected "
            f"{n_weights + n_classes * 3}"
        )
    params = zero_params(
        grid_size,
        tuple(classes),
        hidden,
        {name: (1.0, 1.0, 1.0) for name in classes},
    )
    params = with_flat_params(params, body[:n_weights])
    params.priors = body[n_weights:].reshape(n_classes, 3).copy()
    return params


# --- training-set assembly ---------------------------------------------------

def compute_size_priors(
    records: Iterable[LabelRecord],
) -> dict[str, tuple[float, float, float]]:
    """Per-class mean ground-truth (w, l, h), for use as size priors."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for rec in records:
        if rec.dontcare or rec.box is None:
            continue
        acc = sums.setdefault(rec.class_name, np.zeros(3))
        acc += np.asarray(rec.box.size)
        counts[rec.class_name] = counts.get(rec.class_name, 0) + 1
    return {
        name: tuple((sums[name] / counts[name]).tolist()) for name in sorted(sums)
    }


def bbox_iou_2d(
    a: tuple[float, float, float, float], b: tuple[float, float, float, float]
) -> float:
    """Axis-aligned IoU of two (u_min, v_min, u_max, v_max) boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def build_training_set(
    clouds: Mapping[str, PointCloud],
    detections: Mapping[str, Sequence["Detection2D"]],
    labels: Mapping[str, Sequence[LabelRecord]],
    calibs: Mapping[str, "CalibrationSet"],
    config: "PipelineConfig",
) -> tuple[list[tuple[BevRaster, BoxRegression]], int]:
    """Pair each matched ground-truth object with its raster and targets.

    Detections are matched to same-class ground truth greedily by score at
    2D IoU >= 0.5. Each match runs the frustum / clustering / centroid-frame
    chain; targets are the ground-truth center minus the estimated centroid
    (expressed in the frustum frame), the ground-truth size, and the
    ground-truth yaw minus the frustum rotation. Returns (samples, number
    of ground-truth objects skipped).
    """
    from .geometry import (
        bev_project,
        frustum_rotation,
        points_in_box_frustum,
        points_in_mask_frustum,
        rot_y,
        to_centroid_frame,
    )
    from .clustering import estimate_centroid

    samples: list[tuple[BevRaster, BoxRegression]] = []
    skipped = 0
    frame_ids = sorted(set(clouds) & set(detections) & set(labels) & set(calibs))
    for frame_id in frame_ids:
        calib = calibs[frame_id]
        cloud = clouds[frame_id]
        gt = [
            rec
            for rec in labels[frame_id]
            if not rec.dontcare and rec.box is not None
            and rec.class_name in config.classes
        ]
        matched_gt: set[int] = set()
        pairs: list[tuple[int, "Detection2D"]] = []
        for det in sorted(detections[frame_id], key=lambda d: -d.score):
            best_iou, best_idx = 0.0, -1
            for gi, rec in enumerate(gt):
                if gi in matched_gt or rec.class_name != det.class_name:
                    continue
                iou = bbox_iou_2d(det.bbox, rec.bbox2d)
                if iou > best_iou:
                    best_iou, best_idx = iou, gi
            if best_idx >= 0 and best_iou >= 0.5:
                matched_gt.add(best_idx)
                pairs.append((best_idx, det))
        skipped += len(gt) - len(matched_gt)

        for gi, det in pairs:
            rec = gt[gi]
            if config.frustum_mode == "mask" and det.mask is not None:
                frustum = points_in_mask_frustum(cloud, det, calib)
            else:
                frustum = points_in_box_frustum(cloud, det, calib)
            if len(frustum) < config.min_frustum_points:
                skipped += 1
                continue
            rotated, theta = frustum_rotation(frustum, det, calib)
            centroid = estimate_centroid(rotated, config.bin_width)
            bev = bev_project(to_centroid_frame(rotated, centroid))
            raster = rasterize_bev(
                bev, det.class_name, config.raster_grid, config.raster_extent,
                classes=config.classes,
            )
            gt_center_frustum = rot_y(-theta) @ np.asarray(rec.box.center)
            shift = gt_center_frustum - np.asarray(centroid)
            target = BoxRegression(
                shift=(shift[0], shift[1], shift[2]),
                size=rec.box.size,
                yaw=wrap_angle(rec.box.yaw - theta),
            )
            samples.append((raster, target))
    return samples, skipped
