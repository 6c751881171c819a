"""KITTI-format file I/O.

Covers every on-disk format the pipeline exchanges with the outside world:

* calibration text files (``P2``, ``R0_rect``, ``Tr_velo_to_cam``),
* velodyne scans as little-endian float32 ``(x, y, z, intensity)`` records,
* label / result text files (15 fields, optional trailing score),
* 2D detection lists with optional P5 PGM instance masks.

Parsers tolerate repeated whitespace and blank lines. ``write_results``
produces text that round-trips through ``parse_labels`` to 1e-4 on every
numeric field. All returned objects are immutable after construction, so
different frames can be parsed in parallel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    BadBBox,
    BadCalibration,
    BadScore,
    MalformedCalibLine,
    MalformedDetectionLine,
    MalformedLabelLine,
    MaskDimMismatch,
    MissingCalibKey,
    NonFiniteBox,
    NonFinitePoint,
    TruncatedPointcloud,
)

POINT_RECORD_BYTES = 16  # four little-endian float32 per point


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians into (-pi, pi]."""
    a = angle % (2.0 * math.pi)  # [0, 2*pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    return a


class Frame(str, Enum):
    """Coordinate frame a pointcloud lives in."""

    LIDAR = "lidar"
    CAMERA = "camera"      # rectified camera: x right, y down, z forward
    FRUSTUM = "frustum"    # camera rotated so the frustum center ray is +z
    CENTROID = "centroid"  # frustum frame shifted to the estimated centroid


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3D points in a declared frame, with optional intensities."""

    points: np.ndarray                    # (N, 3) float64
    frame: Frame
    intensities: np.ndarray | None = None  # (N,) float64

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise NonFinitePoint("pointcloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.intensities is not None:
            inten = np.array(self.intensities, dtype=np.float64, copy=True).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("intensities must have exactly one value per point")
            if not np.isfinite(inten).all():
                raise NonFinitePoint("pointcloud contains non-finite intensities")
            inten.setflags(write=False)
            object.__setattr__(self, "intensities", inten)

    def __len__(self) -> int:
        return self.points.shape[0]

    def select(self, mask: np.ndarray) -> "PointCloud":
        """Subset by boolean mask or index array, preserving point order."""
        inten = self.intensities[mask] if self.intensities is not None else None
        return PointCloud(self.points[mask], self.frame, inten)

    def with_points(self, points: np.ndarray, frame: Frame) -> "PointCloud":
        """Same intensities, new coordinates/frame (for rigid transforms)."""
        return PointCloud(points, frame, self.intensities)


@dataclass(frozen=True)
class CalibrationSet:
    """Projection and mounting matrices for one frame."""

    P2: np.ndarray               # 3x4 camera projection, pixels
    R0_rect: np.ndarray          # 3x3 rectification rotation
    Tr_velo_to_cam: np.ndarray   # 3x4 rigid lidar-to-camera transform, meters
    frame_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "P2", _readonly(np.reshape(self.P2, (3, 4))))
        object.__setattr__(self, "R0_rect", _readonly(np.reshape(self.R0_rect, (3, 3))))
        object.__setattr__(
            self, "Tr_velo_to_cam", _readonly(np.reshape(self.Tr_velo_to_cam, (3, 4)))
        )

    def validate(self, tol: float = 1e-3) -> None:
        """Check rectification orthonormality and mounting-rotation handedness."""
        r = self.R0_rect
        err = np.abs(r @ r.T - np.eye(3)).max()
        if not err < tol:
            raise BadCalibration(f"R0_rect not orthonormal (|R R^T - I| = {err:g})")
        if np.linalg.det(self.Tr_velo_to_cam[:, :3]) <= 0:
            raise BadCalibration("Tr_velo_to_cam rotation block has det <= 0")


def parse_calibration(
    text: str, frame_id: str = "", camera_key: str = "P2"
) -> CalibrationSet:
    """Parse a KITTI calibration file (``key: v v v ...`` lines).

    Only the camera projection (``camera_key``, by default P2 for the left
    color camera), R0_rect, and Tr_velo_to_cam are consumed; unknown keys
    are ignored. Raises MissingCalibKey / MalformedCalibLine on bad input.
    """
    wanted = {camera_key: 12, "R0_rect": 9, "Tr_velo_to_cam": 12}
    found: dict[str, np.ndarray] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in wanted:
            continue
        tokens = rest.split()
        if len(tokens) != wanted[key]:
            raise MalformedCalibLine(
                f"{key}: expected {wanted[key]} values, got {len(tokens)}"
            )
        try:
            found[key] = np.array([float(t) for t in tokens], dtype=np.float64)
        except ValueError as exc:
            raise MalformedCalibLine(f"{key}: {exc}") from exc
    for key in wanted:
        if key not in found:
            raise MissingCalibKey(f"calibration is missing required key {key}")
    calib = CalibrationSet(
        P2=found[camera_key].reshape(3, 4),
        R0_rect=found["R0_rect"].reshape(3, 3),
        Tr_velo_to_cam=found["Tr_velo_to_cam"].reshape(3, 4),
        frame_id=frame_id,
    )
    calib.validate()
    return calib


def load_pointcloud(data: bytes) -> PointCloud:
    """Decode a velodyne binary: consecutive float32 LE (x, y, z, intensity)."""
    if len(data) % POINT_RECORD_BYTES != 0:
        raise TruncatedPointcloud(
            f"byte length {len(data)} is not a multiple of {POINT_RECORD_BYTES}"
        )
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    return PointCloud(points=arr[:, :3], frame=Frame.LIDAR, intensities=arr[:, 3])


# --- P5 PGM masks ----------------------------------------------------------

def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) PGM file into a (H, W) uint8/uint16 array."""
    data = Path(path).read_bytes()

    # Header is ASCII tokens (magic, width, height, maxval) with optional
    # '#' comments, followed by a single whitespace byte and the raster.
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            return next_token()
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise ValueError(f"not a P5 PGM file: magic {magic!r}")
    width = int(next_token())
    height = int(next_token())
    maxval = int(next_token())
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if raster.size != count:
        raise ValueError("PGM raster shorter than declared dimensions")
    return raster.reshape(height, width)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W) uint8 array as a binary (P5) PGM file."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


class MaskRef:
    """Lazily loaded P5 PGM instance mask, validated against the image size."""

    def __init__(self, path: str | Path, expected_size: tuple[int, int]):
        self.path = Path(path)
        self.expected_size = (int(expected_size[0]), int(expected_size[1]))  # (W, H)
        self._data: np.ndarray | None = None

    def load(self) -> np.ndarray:
        if self._data is None:
            img = read_pgm(self.path)
            h, w = img.shape
            if (w, h) != self.expected_size:
                raise MaskDimMismatch(
                    f"mask {self.path} is {w}x{h}, image is "
                    f"{self.expected_size[0]}x{self.expected_size[1]}"
                )
            img.setflags(write=False)
            self._data = img
        return self._data

    def __repr__(self) -> str:  # pragma: no cover
        return f"MaskRef({self.path})"


@dataclass(frozen=True)
class Detection2D:
    """One 2D detector output: class, score, pixel box, optional mask."""

    frame_id: str
    class_name: str
    score: float
    bbox: tuple[float, float, float, float]  # (u_min, v_min, u_max, v_max)
    mask: MaskRef | None = None
    image_size: tuple[int, int] | None = None  # (W, H), when known

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise BadScore(f"score {self.score} outside [0, 1]")
        u0, v0, u1, v1 = self.bbox
        if not (u0 < u1 and v0 < v1):
            raise BadBBox(f"inverted bbox {self.bbox}")

    @property
    def bbox_center(self) -> tuple[float, float]:
        u0, v0, u1, v1 = self.bbox
        return (0.5 * (u0 + u1), 0.5 * (v0 + v1))

    def load_mask(self) -> np.ndarray:
        if self.mask is None:
            raise ValueError(f"detection {self.frame_id}/{self.class_name} has no mask")
        return self.mask.load()


def parse_detections(
    text: str,
    image_dims: tuple[int, int],
    mask_dir: str | Path | None = None,
) -> list[Detection2D]:
    """Parse a 2D detection list, one object per line, preserving file order.

    Line format: ``frame_id class score u_min v_min u_max v_max [mask_path]``.
    Mask paths are resolved against ``mask_dir`` and loaded lazily; their
    dimensions are checked against ``image_dims`` at load time.
    """
    out: list[Detection2D] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) not in (7, 8):
            raise MalformedDetectionLine(
                f"expected 7 or 8 fields, got {len(tokens)}: {line!r}"
            )
        try:
            score = float(tokens[2])
            bbox = tuple(float(t) for t in tokens[3:7])
        except ValueError as exc:
            raise MalformedDetectionLine(f"{exc}: {line!r}") from exc
        mask = None
        if len(tokens) == 8:
            mask_path = Path(tokens[7])
            if mask_dir is not None and not mask_path.is_absolute():
                mask_path = Path(mask_dir) / mask_path
            mask = MaskRef(mask_path, image_dims)
        out.append(
            Detection2D(
                frame_id=tokens[0],
                class_name=tokens[1].lower(),
                score=score,
                bbox=bbox,  # type: ignore[arg-type]
                mask=mask,
                image_size=(int(image_dims[0]), int(image_dims[1])),
            )
        )
    return out


@dataclass(frozen=True)
class Box3D:
    """7-DoF upright box in the rectified camera frame.

    ``center`` is the KITTI location point: the center of the bottom face
    (y down, so the box spans y in [center.y - h, center.y]). ``size`` is
    (w, l, h) with length along the box's local x axis and width along its
    local z axis; ``yaw`` rotates about the camera vertical (y) axis.
    """

    center: tuple[float, float, float]
    yaw: float
    size: tuple[float, float, float]  # (w, l, h)
    class_name: str
    score: float = 1.0

    def __post_init__(self) -> None:
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        yaw = float(self.yaw)
        score = float(self.score)
        values = (*center, *size, yaw, score)
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteBox(f"non-finite box field in {values}")
        if not all(s > 0.0 for s in size):
            raise ValueError(f"box sizes must be positive, got {size}")
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"box score {score} outside [0, 1]")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(yaw))
        object.__setattr__(self, "score", score)

    def bev_corners(self) -> np.ndarray:
        """(4, 2) array of (x, z) ground-plane corners, counter-clockwise."""
        w, l, _ = self.size
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array(
            [[l / 2, w / 2], [-l / 2, w / 2], [-l / 2, -w / 2], [l / 2, -w / 2]]
        )
        rot = np.array([[c, s], [-s, c]])
        return local @ rot.T + np.array([self.center[0], self.center[2]])

    def corners(self) -> np.ndarray:
        """(8, 3) camera-frame corners; rows 0-3 bottom face, 4-7 top face."""
        bev = self.bev_corners()
        cy = self.center[1]
        h = self.size[2]
        bottom = np.column_stack([bev[:, 0], np.full(4, cy), bev[:, 1]])
        top = np.column_stack([bev[:, 0], np.full(4, cy - h), bev[:, 1]])
        return np.vstack([bottom, top])


@dataclass(frozen=True)
class LabelRecord:
    """One parsed label/result line; DontCare rows carry no 3D box."""

    class_name: str
    box: Box3D | None
    bbox2d: tuple[float, float, float, float]
    truncation: float
    occlusion: int
    dontcare: bool = False


def parse_labels(text: str) -> list[LabelRecord]:
    """Parse KITTI label/result lines, preserving file order.

    Field layout: type truncated occluded alpha bbox(4) h w l x y z
    rotation_y [score]. The on-disk (h, w, l) order is reordered into the
    Box3D (w, l, h) size convention; score defaults to 1.0 when absent.
    """
    out: list[LabelRecord] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) not in (15, 16):
            raise MalformedLabelLine(
                f"expected 15 or 16 fields, got {len(tokens)}: {line!r}"
            )
        name = tokens[0].lower()
        try:
            vals = [float(t) for t in tokens[1:]]
        except ValueError as exc:
            raise MalformedLabelLine(f"{exc}: {line!r}") from exc
        truncation = vals[0]
        occlusion = int(vals[1])
        bbox2d = (vals[3], vals[4], vals[5], vals[6])
        dontcare = name == "dontcare"
        box = None
        if not dontcare:
            h, w, l = vals[7], vals[8], vals[9]
            score = vals[14] if len(vals) == 15 else 1.0
            try:
                box = Box3D(
                    center=(vals[10], vals[11], vals[12]),
                    yaw=vals[13],
                    size=(w, l, h),
                    class_name=name,
                    score=score,
                )
            except (NonFiniteBox, ValueError) as exc:
                raise MalformedLabelLine(f"{exc}: {line!r}") from exc
        out.append(
            LabelRecord(
                class_name=name,
                box=box,
                bbox2d=bbox2d,
                truncation=truncation,
                occlusion=occlusion,
                dontcare=dontcare,
            )
        )
    return out


def _projected_bbox(
    box: Box3D, calib: CalibrationSet, image_dims: tuple[int, int]
) -> tuple[float, float, float, float]:
    """2D bbox of the projected box corners, clamped to the image."""
    corners = box.corners()
    hom = np.hstack([corners, np.ones((8, 1))])
    uvw = hom @ calib.P2.T
    valid = corners[:, 2] > 0
    if not valid.any():
        return (0.0, 0.0, 0.0, 0.0)
    uv = uvw[valid, :2] / uvw[valid, 2:3]
    w_img, h_img = image_dims
    u0 = float(np.clip(uv[:, 0].min(), 0.0, w_img))
    u1 = float(np.clip(uv[:, 0].max(), 0.0, w_img))
    v0 = float(np.clip(uv[:, 1].min(), 0.0, h_img))
    v1 = float(np.clip(uv[:, 1].max(), 0.0, h_img))
    return (u0, v0, u1, v1)


def write_results(
    boxes: list[Box3D], calib: CalibrationSet, image_dims: tuple[int, int]
) -> str:
    """Serialize boxes as KITTI result lines (label layout + trailing score).

    Round-trip property: ``parse_labels(write_results(boxes))`` reproduces
    every Box3D field to 1e-4 (yaw compared modulo 2*pi).
    """
    lines = []
    for box in boxes:
        x, y, z = box.center
        w, l, h = box.size
        alpha = wrap_angle(box.yaw - math.atan2(x, z))
        u0, v0, u1, v1 = _projected_bbox(box, calib, image_dims)
        lines.append(
            f"{box.class_name.capitalize()} -1 -1 {alpha:.4f} "
            f"{u0:.4f} {v0:.4f} {u1:.4f} {v1:.4f} "
            f"{h:.4f} {w:.4f} {l:.4f} "
            f"{x:.4f} {y:.4f} {z:.4f} {box.yaw:.4f} {box.score:.4f}"
        )
    return "".join(line + "\n" for line in lines)
