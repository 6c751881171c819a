"""Coordinate chain from raw lidar to the centroid-frame BEV projection.

Frames: lidar -> rectified camera (rigid transform + rectification) ->
frustum (camera rotated about its vertical axis so the detection's center
ray becomes +z) -> centroid (frustum shifted to the estimated centroid).
All operations are pure and preserve point order and intensities, so
per-detection frustum extraction is safe to run in parallel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadCalibration, FrameMismatch
from .kitti_io import CalibrationSet, Detection2D, Frame, PointCloud


def rot_y(angle: float) -> np.ndarray:
    """Rotation about the camera vertical (y) axis; adds `angle` to azimuth.

    Azimuth is atan2(x, z), so rot_y(a) maps a point at azimuth t to
    azimuth t + a while preserving y and the Euclidean norm.
    """
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class FrustumContext:
    """Frustum-frame bookkeeping for one detection."""

    rotation_angle: float                    # camera-frame yaw of the center ray
    centroid: tuple[float, float, float]     # estimated centroid, frustum frame
    source_detection: Detection2D


def _require_frame(cloud: PointCloud, frame: Frame) -> None:
    if cloud.frame != frame:
        raise FrameMismatch(f"expected {frame.value} cloud, got {cloud.frame.value}")


def lidar_to_camera(cloud: PointCloud, calib: CalibrationSet) -> PointCloud:
    """Map lidar points into the rectified camera frame: R0 . (Tr . [p;1])."""
    _require_frame(cloud, Frame.LIDAR)
    hom = np.hstack([cloud.points, np.ones((len(cloud), 1))])
    cam = hom @ calib.Tr_velo_to_cam.T
    rect = cam @ calib.R0_rect.T
    return cloud.with_points(rect, Frame.CAMERA)


def project_to_image(
    cloud: PointCloud, calib: CalibrationSet
) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points through P2 onto the image plane.

    Returns ((N, 2) pixel coordinates, (N,) validity). A point is valid when
    it lies in front of the camera (z > 0) and projects to finite pixels;
    invalid points keep their slot so indices stay aligned with the input.
    """
    _require_frame(cloud, Frame.CAMERA)
    hom = np.hstack([cloud.points, np.ones((len(cloud), 1))])
    uvw = hom @ calib.P2.T
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = uvw[:, :2] / uvw[:, 2:3]
    valid = (cloud.points[:, 2] > 0) & np.isfinite(uv).all(axis=1)
    return uv, valid


def _clamped_bbox(det: Detection2D) -> tuple[float, float, float, float]:
    u0, v0, u1, v1 = det.bbox
    if det.image_size is not None:
        w, h = det.image_size
        u0, u1 = max(u0, 0.0), min(u1, float(w))
        v0, v1 = max(v0, 0.0), min(v1, float(h))
    return u0, v0, u1, v1


def points_in_box_frustum(
    cloud: PointCloud, det: Detection2D, calib: CalibrationSet
) -> PointCloud:
    """Camera-frame subset of the cloud whose projection falls in the 2D box.

    Membership uses the half-open convention u_min <= u < u_max (likewise v)
    on the image-clamped box; points behind the camera are never members.
    """
    _require_frame(cloud, Frame.LIDAR)
    cam = lidar_to_camera(cloud, calib)
    uv, valid = project_to_image(cam, calib)
    u0, v0, u1, v1 = _clamped_bbox(det)
    with np.errstate(invalid="ignore"):
        inside = (
            (uv[:, 0] >= u0) & (uv[:, 0] < u1) & (uv[:, 1] >= v0) & (uv[:, 1] < v1)
        )
    return cam.select(valid & inside)


def points_in_mask_frustum(
    cloud: PointCloud, det: Detection2D, calib: CalibrationSet
) -> PointCloud:
    """Camera-frame subset whose projection lands on a positive mask pixel.

    The pixel is selected by floor(u), floor(v); projections outside the
    bitmap are simply excluded. Whenever the mask's support lies inside the
    detection bbox this is a subset of the box-frustum result.
    """
    _require_frame(cloud, Frame.LIDAR)
    mask = det.load_mask()
    cam = lidar_to_camera(cloud, calib)
    uv, valid = project_to_image(cam, calib)
    h, w = mask.shape
    with np.errstate(invalid="ignore"):
        iu = np.floor(uv[:, 0]).astype(np.int64, copy=False)
        iv = np.floor(uv[:, 1]).astype(np.int64, copy=False)
    iu = np.where(valid, iu, -1)
    iv = np.where(valid, iv, -1)
    in_bitmap = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
    hit = np.zeros(len(cloud), dtype=bool)
    idx = np.nonzero(in_bitmap)[0]
    hit[idx] = mask[iv[idx], iu[idx]] > 0
    return cam.select(valid & hit)


def frustum_rotation(
    cloud: PointCloud, det: Detection2D, calib: CalibrationSet
) -> tuple[PointCloud, float]:
    """Rotate camera points so the detection's center ray becomes the z axis.

    The center ray is the bbox center pixel back-projected through the left
    3x3 of P2 at unit depth; theta = atan2(x, z) of that ray. Every point is
    rotated by -theta about the camera vertical axis (norm-preserving).
    """
    _require_frame(cloud, Frame.CAMERA)
    k = calib.P2[:, :3]
    if abs(np.linalg.det(k)) < 1e-12:
        raise BadCalibration("left 3x3 of P2 is not invertible")
    u, v = det.bbox_center
    ray = np.linalg.solve(k, np.array([u, v, 1.0]))
    theta = math.atan2(ray[0], ray[2])
    rotated = cloud.points @ rot_y(-theta).T
    return cloud.with_points(rotated, Frame.FRUSTUM), theta


def to_centroid_frame(
    cloud: PointCloud, centroid: tuple[float, float, float]
) -> PointCloud:
    """Shift a frustum-frame cloud so the estimated centroid is the origin."""
    _require_frame(cloud, Frame.FRUSTUM)
    shifted = cloud.points - np.asarray(centroid, dtype=np.float64)
    return cloud.with_points(shifted, Frame.CENTROID)


def bev_project(cloud: PointCloud) -> np.ndarray:
    """Drop the vertical axis: (N, 2) array of (x, z), order preserved."""
    _require_frame(cloud, Frame.CENTROID)
    return cloud.points[:, [0, 2]].copy()
