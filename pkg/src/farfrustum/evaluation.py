"""Detection metrics: rotated BEV/3D IoU, faraway aIoU, 11-point AP, stats.

The faraway benchmark deliberately uses a low IoU threshold (0.1): at long
range a coarse localization is still far more useful than a miss, so the
metric rewards any overlap rather than tight fits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ZeroAreaBox
from .geometry import lidar_to_camera, rot_y
from .kitti_io import Box3D, CalibrationSet, Frame, LabelRecord, PointCloud

# --- rotated IoU ------------------------------------------------------------


def _polygon_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    x, z = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a CCW convex polygon."""
    output = [tuple(p) for p in subject]
    n_clip = len(clip)
    for k in range(n_clip):
        if len(output) < 3:
            return np.zeros((0, 2))
        a = clip[k]
        b = clip[(k + 1) % n_clip]
        edge = (b[0] - a[0], b[1] - a[1])
        inputs = output
        output = []
        # signed area of (edge, a->p); >= 0 keeps points on the inner side
        values = [
            edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) for p in inputs
        ]
        for i, p in enumerate(inputs):
            q = inputs[(i + 1) % len(inputs)]
            vp, vq = values[i], values[(i + 1) % len(inputs)]
            if vp >= 0:
                output.append(p)
            if vp * vq < 0:  # strict sign change: insert the crossing point
                t = vp / (vp - vq)
                output.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return np.array(output) if len(output) >= 3 else np.zeros((0, 2))


def _bev_footprint(box: Box3D) -> tuple[np.ndarray, float]:
    """Corners and shoelace area of the ground-plane rectangle.

    The area is measured on the corner polygon itself (not as w*l) so that
    identical boxes compare at exactly 1.0: clipping a polygon by itself
    returns it verbatim, and the intersection then carries the same floats
    as each footprint.
    """
    if box.size[0] * box.size[1] <= 0:
        raise ZeroAreaBox(f"box has zero footprint area: size {box.size}")
    corners = box.bev_corners()
    return corners, _polygon_area(corners)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """IoU of the two yaw-rotated ground-plane rectangles."""
    poly_a, area_a = _bev_footprint(a)
    poly_b, area_b = _bev_footprint(b)
    inter_poly = _clip_polygon(poly_a, poly_b)
    inter = _polygon_area(inter_poly) if len(inter_poly) else 0.0
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)


def _vertical_interval(box: Box3D) -> tuple[float, float]:
    # y points down: a box spans [center_y - h, center_y]
    return box.center[1] - box.size[2], box.center[1]


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU for upright boxes: BEV intersection times vertical overlap."""
    poly_a, area_a = _bev_footprint(a)
    poly_b, area_b = _bev_footprint(b)
    top_a, bottom_a = _vertical_interval(a)
    top_b, bottom_b = _vertical_interval(b)
    # heights via the same subtractions used for the overlap, keeping the
    # identical-box case exact
    vol_a = area_a * (bottom_a - top_a)
    vol_b = area_b * (bottom_b - top_b)
    if vol_a <= 0 or vol_b <= 0:
        raise ZeroAreaBox("box has zero volume")
    inter_poly = _clip_polygon(poly_a, poly_b)
    inter_area = _polygon_area(inter_poly) if len(inter_poly) else 0.0
    overlap = max(0.0, min(bottom_a, bottom_b) - max(top_a, top_b))
    inter_vol = inter_area * overlap
    union = vol_a + vol_b - inter_vol
    return min(max(inter_vol / union, 0.0), 1.0)


def _iou_fn(kind: str) -> Callable[[Box3D, Box3D], float]:
    if kind == "bev":
        return bev_iou
    if kind == "3d":
        return iou_3d
    raise ValueError(f"iou kind must be 'bev' or '3d', got {kind!r}")


# --- matching and aggregate metrics ------------------------------------------


def match_greedy(
    gt: Sequence[Box3D], preds: Sequence[Box3D], kind: str = "bev"
) -> list[tuple[int, int | None, float]]:
    """One-to-one same-class matching, greedy over GTs by best available IoU.

    Ground truths are processed in descending order of their best IoU over
    the still-unmatched predictions; each prediction is consumed at most
    once. Returns (gt index, pred index or None, iou) per ground truth.
    """
    iou = _iou_fn(kind)
    table = np.zeros((len(gt), len(preds)))
    for gi, g in enumerate(gt):
        for pi, p in enumerate(preds):
            if p.class_name == g.class_name:
                table[gi, pi] = iou(g, p)
    order = sorted(range(len(gt)), key=lambda gi: -table[gi].max(initial=0.0))
    used: set[int] = set()
    result: list[tuple[int, int | None, float]] = []
    for gi in order:
        best_pi, best_iou = None, 0.0
        for pi in range(len(preds)):
            if pi in used:
                continue
            if table[gi, pi] > best_iou:
                best_pi, best_iou = pi, table[gi, pi]
        if best_pi is not None:
            used.add(best_pi)
            result.append((gi, best_pi, float(best_iou)))
        else:
            result.append((gi, None, 0.0))
    result.sort(key=lambda t: t[0])
    return result


def average_iou(
    gt: Sequence[Box3D],
    preds: Sequence[Box3D],
    faraway: Callable[[Box3D], bool] | None = None,
    kind: str = "bev",
) -> float | None:
    """Mean matched IoU over (optionally faraway-filtered) ground truths.

    Unmatched ground truths contribute 0; returns None when no ground truth
    survives the filter (undefined rather than 0).
    """
    kept = [g for g in gt if faraway is None or faraway(g)]
    if not kept:
        return None
    matches = match_greedy(kept, list(preds), kind)
    return float(sum(m[2] for m in matches) / len(kept))


def _interp_ap(points: list[tuple[float, float]]) -> float:
    """11-point interpolated AP in percent from (recall, precision) points."""
    total = 0.0
    for level in np.linspace(0.0, 1.0, 11):
        candidates = [p for r, p in points if r >= level - 1e-12]
        total += max(candidates) if candidates else 0.0
    return 100.0 * total / 11.0


def ap_11point(
    gt_by_frame: Mapping[str, Sequence[Box3D]] | Sequence[Box3D],
    preds_by_frame: Mapping[str, Sequence[Box3D]] | Sequence[Box3D],
    iou_threshold: float = 0.1,
    kind: str = "bev",
) -> float | None:
    """11-recall-point interpolated average precision, in percent.

    Predictions are sorted by descending score (stable on input order) and
    matched greedily to the highest-IoU unmatched same-class ground truth of
    their frame at IoU >= threshold. Returns None when there is no ground
    truth (absent rather than 0, matching the evaluation convention of
    skipping empty classes). Plain sequences are treated as a single frame.
    """
    if not isinstance(gt_by_frame, Mapping):
        gt_by_frame = {"": list(gt_by_frame)}
    if not isinstance(preds_by_frame, Mapping):
        preds_by_frame = {"": list(preds_by_frame)}
    iou = _iou_fn(kind)
    n_gt = sum(len(v) for v in gt_by_frame.values())
    if n_gt == 0:
        return None
    pool = [
        (frame, i, box)
        for frame in preds_by_frame
        for i, box in enumerate(preds_by_frame[frame])
    ]
    pool.sort(key=lambda t: -t[2].score)  # sort() is stable: ties keep input order
    matched: dict[str, set[int]] = {frame: set() for frame in gt_by_frame}
    tp = np.zeros(len(pool))
    for rank, (frame, _, box) in enumerate(pool):
        candidates = gt_by_frame.get(frame, ())
        best_gi, best_iou = None, 0.0
        for gi, g in enumerate(candidates):
            if gi in matched.get(frame, set()) or g.class_name != box.class_name:
                continue
            value = iou(g, box)
            if value >= iou_threshold and value > best_iou:
                best_gi, best_iou = gi, value
        if best_gi is not None:
            matched.setdefault(frame, set()).add(best_gi)
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(pool) + 1)
    points = [
        (cum_tp[i] / n_gt, cum_tp[i] / ranks[i]) for i in range(len(pool))
    ]
    if not points:
        return 0.0
    return _interp_ap(points)


# --- report ------------------------------------------------------------------


@dataclass(frozen=True)
class ClassEval:
    aiou: float | None
    ap_bev: float | None
    ap_3d: float | None
    n_gt: int
    n_pred: int


@dataclass
class EvalReport:
    """Per-class metrics plus matched-pair diagnostics."""

    per_class: dict[str, ClassEval] = field(default_factory=dict)
    matches: list[tuple[str, str, int, int | None, float]] = field(
        default_factory=list
    )  # (frame, class, gt idx, pred idx or None, iou)


def faraway_filter(
    thresholds: Mapping[str, float],
) -> Callable[[Box3D], bool]:
    """Predicate selecting boxes at or beyond their class depth threshold."""

    def check(box: Box3D) -> bool:
        threshold = thresholds.get(box.class_name)
        return threshold is not None and box.center[2] >= threshold

    return check


def evaluate_boxes(
    gt_by_frame: Mapping[str, Sequence[Box3D]],
    preds_by_frame: Mapping[str, Sequence[Box3D]],
    iou_threshold: float = 0.1,
    faraway: Callable[[Box3D], bool] | None = None,
) -> EvalReport:
    """Build the full per-class report over a set of frames.

    When a faraway filter is given it is applied to both ground truth and
    predictions, so near-range boxes neither count as targets nor as false
    positives.
    """
    frames = sorted(set(gt_by_frame) | set(preds_by_frame))
    gt_f = {
        f: [g for g in gt_by_frame.get(f, ()) if faraway is None or faraway(g)]
        for f in frames
    }
    pred_f = {
        f: [p for p in preds_by_frame.get(f, ()) if faraway is None or faraway(p)]
        for f in frames
    }
    classes = sorted(
        {b.class_name for boxes in gt_f.values() for b in boxes}
        | {b.class_name for boxes in pred_f.values() for b in boxes}
    )
    report = EvalReport()
    for cls in classes:
        gt_c = {f: [g for g in gt_f[f] if g.class_name == cls] for f in frames}
        pred_c = {f: [p for p in pred_f[f] if p.class_name == cls] for f in frames}
        n_gt = sum(len(v) for v in gt_c.values())
        n_pred = sum(len(v) for v in pred_c.values())
        iou_sum = 0.0
        for f in frames:
            if not gt_c[f]:
                continue
            for gi, pi, iou in match_greedy(gt_c[f], pred_c[f], kind="bev"):
                iou_sum += iou
                report.matches.append((f, cls, gi, pi, iou))
        report.per_class[cls] = ClassEval(
            aiou=(iou_sum / n_gt) if n_gt else None,
            ap_bev=ap_11point(gt_c, pred_c, iou_threshold, kind="bev"),
            ap_3d=ap_11point(gt_c, pred_c, iou_threshold, kind="3d"),
            n_gt=n_gt,
            n_pred=n_pred,
        )
    return report


def _fmt(value: float | None, decimals: int) -> str:
    return "-" if value is None else f"{value:.{decimals}f}"


def format_report(report: EvalReport) -> str:
    """Human-readable table."""
    lines = [
        f"{'class':<12} {'n_gt':>5} {'n_pred':>6} {'aIoU':>8} {'AP_bev':>8} {'AP_3d':>8}"
    ]
    for cls, ev in sorted(report.per_class.items()):
        lines.append(
            f"{cls:<12} {ev.n_gt:>5} {ev.n_pred:>6} "
            f"{_fmt(ev.aiou, 4):>8} {_fmt(ev.ap_bev, 2):>8} {_fmt(ev.ap_3d, 2):>8}"
        )
    return "\n".join(lines)


def machine_lines(report: EvalReport) -> list[str]:
    """Line-oriented ``class,metric,value`` form of the report."""
    out = []
    for cls, ev in sorted(report.per_class.items()):
        out.append(f"{cls},n_gt,{ev.n_gt}")
        out.append(f"{cls},n_pred,{ev.n_pred}")
        if ev.aiou is not None:
            out.append(f"{cls},aiou,{ev.aiou:.6f}")
        if ev.ap_bev is not None:
            out.append(f"{cls},ap_bev,{ev.ap_bev:.4f}")
        if ev.ap_3d is not None:
            out.append(f"{cls},ap_3d,{ev.ap_3d:.4f}")
    return out


# --- dataset statistics --------------------------------------------------------


def points_in_box_mask(points_cam: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean mask of camera-frame points inside an upright box (closed faces)."""
    pts = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    local = (pts - np.asarray(box.center)) @ rot_y(-box.yaw).T
    w, l, h = box.size
    return (
        (np.abs(local[:, 0]) <= l / 2)
        & (np.abs(local[:, 2]) <= w / 2)
        & (local[:, 1] <= 0.0)
        & (local[:, 1] >= -h)
    )


@dataclass(frozen=True)
class ObjectPointStat:
    frame_id: str
    class_name: str
    depth: float
    count: int


def points_per_object_stats(
    labels_by_frame: Mapping[str, Sequence[LabelRecord]],
    clouds_by_frame: Mapping[str, PointCloud],
    calibs_by_frame: Mapping[str, CalibrationSet],
) -> list[ObjectPointStat]:
    """Per ground-truth object: class, center depth, lidar points inside it.

    The resulting (depth, count) scatter is what motivates choosing per-class
    faraway thresholds where typical objects drop to about ten points.
    """
    out: list[ObjectPointStat] = []
    for frame_id in sorted(labels_by_frame):
        labels = labels_by_frame[frame_id]
        cloud = clouds_by_frame[frame_id]
        calib = calibs_by_frame[frame_id]
        cam = (
            lidar_to_camera(cloud, calib) if cloud.frame == Frame.LIDAR else cloud
        )
        for rec in labels:
            if rec.dontcare or rec.box is None:
                continue
            inside = points_in_box_mask(cam.points, rec.box)
            out.append(
                ObjectPointStat(
                    frame_id=frame_id,
                    class_name=rec.class_name,
                    depth=float(rec.box.center[2]),
                    count=int(inside.sum()),
                )
            )
    return out


# --- ground-truth difficulty filter -------------------------------------------

_DIFFICULTY_RULES = {
    # min 2D bbox height (px), max occlusion level, max truncation
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}


def filter_difficulty(
    records: Sequence[LabelRecord], level: str
) -> list[LabelRecord]:
    """Optional GT filter by the standard easy/moderate/hard rules."""
    if level not in _DIFFICULTY_RULES:
        raise ValueError(f"difficulty must be one of {sorted(_DIFFICULTY_RULES)}")
    min_height, max_occ, max_trunc = _DIFFICULTY_RULES[level]
    kept = []
    for rec in records:
        height = rec.bbox2d[3] - rec.bbox2d[1]
        if height >= min_height and rec.occlusion <= max_occ and rec.truncation <= max_trunc:
            kept.append(rec)
    return kept
