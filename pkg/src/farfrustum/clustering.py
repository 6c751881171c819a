"""Histogram-mode centroid estimation for sparse frustum pointclouds.

Dense learned representations degrade badly on the handful of points a
faraway object returns; a per-axis histogram mode is robust there because
surface returns concentrate in one bin while stray background points
scatter. The estimate is the modal bin's midpoint, independently per axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCluster
from .kitti_io import PointCloud

DEFAULT_BIN_WIDTH = 0.1  # meters, finer than any target object's surface spread


@dataclass(frozen=True)
class AxisHistogram:
    """Fixed-width histogram over one coordinate axis."""

    edges: tuple[tuple[float, float], ...]  # (e_left, e_right) per bin, contiguous
    counts: np.ndarray                      # (n_bins,) int64
    axis: str = "x"

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(
            self, "edges", tuple((float(a), float(b)) for a, b in self.edges)
        )

    @property
    def modal_bin(self) -> int:
        """Index of the bin with the largest count; ties go to the lowest index."""
        return int(np.argmax(self.counts))

    @property
    def modal_midpoint(self) -> float:
        left, right = self.edges[self.modal_bin]
        return 0.5 * (left + right)


def axis_histogram(
    values: np.ndarray, bin_width: float = DEFAULT_BIN_WIDTH, axis: str = "x"
) -> AxisHistogram:
    """Bin values into contiguous fixed-width bins covering [min, max].

    Bin edges sit at min + k*bin_width; the final bin is padded so it
    contains max. Bins are half-open [e_left, e_right) except the last,
    which is closed on the right.
    """
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size == 0:
        raise EmptyCluster("cannot histogram zero values")
    if not bin_width > 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    vmin = float(vals.min())
    vmax = float(vals.max())
    n_bins = max(1, int(np.ceil((vmax - vmin) / bin_width)))
    edge_vals = vmin + np.arange(n_bins + 1, dtype=np.float64) * bin_width
    # Last left edge <= v guarantees idx in [0, n_bins - 1] for v in [min, max].
    idx = np.searchsorted(edge_vals[:-1], vals, side="right") - 1
    counts = np.bincount(idx, minlength=n_bins)
    edges = tuple(zip(edge_vals[:-1].tolist(), edge_vals[1:].tolist()))
    return AxisHistogram(edges=edges, counts=counts, axis=axis)


def estimate_centroid(
    cloud: PointCloud, bin_width: float = DEFAULT_BIN_WIDTH
) -> tuple[float, float, float]:
    """Estimate the object centroid as per-axis modal-bin midpoints.

    Run after frustum rotation, so the returned z is directly the depth
    used for faraway routing.
    """
    if len(cloud) == 0:
        raise EmptyCluster("cannot estimate a centroid from zero points")
    mids = []
    for col, axis in ((0, "x"), (1, "y"), (2, "z")):
        hist = axis_histogram(cloud.points[:, col], bin_width, axis=axis)
        mids.append(hist.modal_midpoint)
    return (mids[0], mids[1], mids[2])
