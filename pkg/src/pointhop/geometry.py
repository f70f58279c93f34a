"""Point-cloud container and the spatial primitives used by the feature tree.

All searches are exact linear scans over squared Euclidean distances, so
results are reproducible bit-for-bit. Ties are broken deterministically:

* FPS: lexicographically smallest (x, y, z), then smallest index.
* kNN: the center always comes first, remaining points by distance, then index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import InvalidInput

#: Number of octants around a center point.
NUM_OCTANTS = 8


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of N points in 3D with an optional class label."""

    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInput(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidInput("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("point coordinates must be finite")
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.label)


@dataclass(frozen=True)
class NeighborSet:
    center_index: int
    neighbor_indices: np.ndarray


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInput(f"points must have shape (N, 3), got {pts.shape}")
    return pts


def normalize(cloud: PointCloud) -> PointCloud:
    """Center the cloud at the origin and scale its largest point norm to 1.

    A cloud whose points all coincide is only centered.
    """
    pts = cloud.points - cloud.points.mean(axis=0)
    scale = np.sqrt((pts * pts).sum(axis=1)).max()
    if scale > 0:
        pts = pts / scale
    return cloud.with_points(pts)


def _lexicographic_first(points: np.ndarray, candidates: np.ndarray) -> int:
    if candidates.size == 1:
        return int(candidates[0])
    sub = points[candidates]
    order = np.lexsort((candidates, sub[:, 2], sub[:, 1], sub[:, 0]))
    return int(candidates[order[0]])


def farthest_point_sample(cloud, m: int) -> np.ndarray:
    """Greedy farthest point sampling.

    The seed is the point farthest from the centroid. Every following pick
    maximizes the minimum distance to the points already chosen.

    Args:
        cloud: a PointCloud or an (N, 3) array.
        m: number of points to keep, 1 <= m <= N.

    Returns:
        int64 array of m distinct indices in selection order.
    """
    pts = _as_points(cloud)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise InvalidInput(f"cannot sample {m} points from a cloud of {n}")
    diff = pts - pts.mean(axis=0)
    d2 = (diff * diff).sum(axis=1)
    first = _lexicographic_first(pts, np.flatnonzero(d2 == d2.max()))
    return _kernels.fps(pts, first, m)


def knn_indices(
    candidates: np.ndarray,
    centers: np.ndarray,
    k: int,
    center_ids: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Exact k nearest neighbors of each center among ``candidates``.

    When ``center_ids`` gives each center's own index in ``candidates``, that
    index is placed first regardless of coincident duplicates.

    Returns:
        (len(centers), k) int64 array, rows ordered by (distance, index).
    """
    candidates = np.ascontiguousarray(candidates, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    n = candidates.shape[0]
    if not 1 <= k <= n:
        raise InvalidInput(f"k={k} is out of range for {n} candidate points")
    if center_ids is None:
        center_ids = np.full(centers.shape[0], -1, dtype=np.int64)
    return _kernels.knn(candidates, centers, np.asarray(center_ids, dtype=np.int64), k)


def knn(cloud, center_index: int, k: int) -> NeighborSet:
    """The k nearest points to one center, the center itself included."""
    pts = _as_points(cloud)
    n = pts.shape[0]
    if not 0 <= center_index < n:
        raise InvalidInput(f"center index {center_index} out of range")
    idx = knn_indices(pts, pts[center_index : center_index + 1], k, np.array([center_index]))
    return NeighborSet(int(center_index), idx[0])


def octant_codes(offsets: np.ndarray) -> np.ndarray:
    """Octant index for offset vectors: bit2 = dx>=0, bit1 = dy>=0, bit0 = dz>=0."""
    offsets = np.asarray(offsets)
    nonneg = (offsets >= 0).astype(np.int8)
    return (nonneg[..., 0] << 2) | (nonneg[..., 1] << 1) | nonneg[..., 2]


def octant_partition(cloud, ns: NeighborSet) -> list:
    """Split the non-center neighbors into 8 index groups by octant."""
    pts = _as_points(cloud)
    others = ns.neighbor_indices[ns.neighbor_indices != ns.center_index]
    codes = octant_codes(pts[others] - pts[ns.center_index])
    return [others[codes == o] for o in range(NUM_OCTANTS)]


_AXES = {"x": 0, "y": 1, "z": 2}


def rotation_matrix(angle: float, axis: str = "z") -> np.ndarray:
    """Right-handed rotation by ``angle`` radians about a coordinate axis."""
    if not np.isfinite(angle):
        raise InvalidInput("rotation angle must be finite")
    if axis not in _AXES:
        raise InvalidInput(f"unknown rotation axis {axis!r}")
    c, s = np.cos(angle), np.sin(angle)
    i, j = [a for a in range(3) if a != _AXES[axis]]
    if axis == "y":
        i, j = j, i
    rot = np.eye(3)
    rot[i, i], rot[i, j] = c, -s
    rot[j, i], rot[j, j] = s, c
    return rot


def rotate(cloud: PointCloud, angle: float, axis: str = "z") -> PointCloud:
    return cloud.with_points(cloud.points @ rotation_matrix(angle, axis).T)


def rotate_about_z(cloud: PointCloud, angle: float) -> PointCloud:
    return rotate(cloud, angle, "z")
