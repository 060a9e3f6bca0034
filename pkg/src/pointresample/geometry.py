"""Point cloud container, normalization, exact spatial queries, FPS and patches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, InvalidInputError

# candidates fetched beyond k so that distance ties at the k-th slot can be resolved by index
_TIE_SLACK = 8


@dataclass(frozen=True)
class Transform:
    """Normalization record: ``normalized = (raw - centroid) / scale``."""

    centroid: np.ndarray
    scale: float

    def apply(self, points):
        return (points - self.centroid) / self.scale

    def invert(self, points):
        return points * self.scale + self.centroid


@dataclass
class PointCloud:
    points: np.ndarray
    transform: Optional[Transform] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidInputError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point coordinates must be finite")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def copy(self):
        return PointCloud(self.points.copy(), self.transform)

    def with_points(self, points):
        """Same transform record, new coordinates."""
        return PointCloud(points, self.transform)


def bounding_sphere_radius(points):
    """Max distance from the centroid (0 for a degenerate cloud)."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    return float(np.sqrt((centered**2).sum(axis=1)).max())


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center at the centroid and scale so the farthest point has norm 1.

    The returned transform maps back to the frame of the *original* raw data,
    composing with any transform already recorded on ``cloud``.
    """
    pts = cloud.points
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.sqrt((centered**2).sum(axis=1)).max())
    # a spread at the rounding level of the coordinates is a single repeated point
    if scale <= 16 * np.finfo(np.float64).eps * float(np.abs(pts).max(initial=0.0)):
        scale, centered = 1.0, np.zeros_like(centered)
    out = centered / scale
    if cloud.transform is not None:
        prev = cloud.transform
        tf = Transform(prev.centroid + prev.scale * centroid, prev.scale * scale)
    else:
        tf = Transform(centroid, scale)
    return PointCloud(out, tf)


def denormalize(cloud: PointCloud) -> PointCloud:
    if cloud.transform is None:
        return cloud.copy()
    return PointCloud(cloud.transform.invert(cloud.points))


def pairwise_distances(a, b):
    """Euclidean distances with the same float ops used by every exact query."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _row_distances(points, queries, idx):
    diff = points[idx] - queries[:, None, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _sort_rows(idx, dist):
    """Sort each row by (distance, index); invalid slots carry dist=inf, idx=N."""
    order = np.lexsort((idx, dist), axis=-1)
    return np.take_along_axis(idx, order, -1), np.take_along_axis(dist, order, -1)


class SpatialIndex:
    """Exact k-nearest / radius queries over a fixed set of points.

    Candidate generation uses a k-d tree; every reported distance is recomputed
    with :func:`pairwise_distances` arithmetic and ties are ordered by index,
    so results are identical to a brute-force scan.
    """

    def __init__(self, points):
        if isinstance(points, PointCloud):
            points = points.points
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) == 0:
            raise InvalidInputError("SpatialIndex needs a non-empty (N, 3) array")
        self._tree = cKDTree(self.points)

    def __len__(self):
        return self.points.shape[0]

    def knn_batch(self, queries, k):
        """Return ``(indices, distances)`` of shape (Q, k), ascending per row."""
        n = len(self)
        if not 1 <= k <= n:
            raise InvalidArgumentError(f"k must be in [1, {n}], got {k}")
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        m = min(n, k + _TIE_SLACK)
        tree_d, idx = self._tree.query(q, k=m)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(q), m)
        tree_d = np.asarray(tree_d).reshape(len(q), m)
        dist = _row_distances(self.points, q, idx)
        idx, dist = _sort_rows(idx, dist)
        out_i, out_d = idx[:, :k].copy(), dist[:, :k].copy()
        if m < n:
            # anything outside the candidate set is at least as far as the last candidate
            unsure = np.nonzero(dist[:, k - 1] >= tree_d[:, -1] * (1.0 - 1e-12))[0]
            for row in unsure:
                cand = np.asarray(
                    self._tree.query_ball_point(q[row], dist[row, k - 1] * (1 + 1e-9) + 1e-300),
                    dtype=np.int64,
                )
                d = _row_distances(self.points, q[row : row + 1], cand[None, :])[0]
                order = np.lexsort((cand, d))[:k]
                out_i[row], out_d[row] = cand[order], d[order]
        return out_i, out_d

    def knn(self, query, k):
        """List of ``(index, distance)`` for the k nearest points, ties by index."""
        idx, dist = self.knn_batch(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
        return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]

    def radius_batch(self, queries, r, cap):
        """Up to ``cap`` nearest points within distance ``r`` of each query.

        Returns padded ``(indices, distances, counts)``; padding slots hold
        index -1 and distance inf.
        """
        if not r > 0:
            raise InvalidArgumentError(f"radius must be positive, got {r}")
        if cap < 1:
            raise InvalidArgumentError(f"cap must be >= 1, got {cap}")
        n = len(self)
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        m = min(n, cap + _TIE_SLACK)
        tree_d, idx = self._tree.query(q, k=m, distance_upper_bound=r * (1 + 1e-9))
        idx = np.asarray(idx, dtype=np.int64).reshape(len(q), m)
        tree_d = np.asarray(tree_d).reshape(len(q), m)
        found = np.isfinite(tree_d)
        safe = np.where(found, idx, 0)
        dist = np.where(found, _row_distances(self.points, q, safe), np.inf)
        dist = np.where(dist <= r, dist, np.inf)
        idx = np.where(np.isfinite(dist), idx, n)
        idx, dist = _sort_rows(idx, dist)
        out_i, out_d = idx[:, :cap].copy(), dist[:, :cap].copy()
        if m < n:
            # the candidate list was full: more points may sit inside r
            for row in np.nonzero(found[:, -1])[0]:
                cand = np.asarray(self._tree.query_ball_point(q[row], r * (1 + 1e-9)), dtype=np.int64)
                d = _row_distances(self.points, q[row : row + 1], cand[None, :])[0]
                keep = d <= r
                cand, d = cand[keep], d[keep]
                order = np.lexsort((cand, d))[:cap]
                out_i[row, :] = n
                out_d[row, :] = np.inf
                out_i[row, : len(order)], out_d[row, : len(order)] = cand[order], d[order]
        valid = np.isfinite(out_d)
        out_i[~valid] = -1
        return out_i, out_d, valid.sum(axis=1)

    def radius_neighbors(self, query, r, cap):
        idx, dist, count = self.radius_batch(np.asarray(query, dtype=np.float64).reshape(1, 3), r, cap)
        c = int(count[0])
        return [(int(i), float(d)) for i, d in zip(idx[0, :c], dist[0, :c])]


def knn_excluding_self(index: SpatialIndex, k):
    """k nearest *other* points for every indexed point, shape (N, k).

    With duplicated coordinates the point itself may not come first, so it is
    removed explicitly rather than by dropping column 0.
    """
    n = len(index)
    if not 1 <= k < n:
        raise InvalidArgumentError(f"k must be in [1, {n - 1}], got {k}")
    idx, dist = index.knn_batch(index.points, k + 1)
    rows = np.arange(n)[:, None]
    is_self = idx == rows
    # rows where self was not among the k+1 results (possible only with >k duplicates)
    missing = ~is_self.any(axis=1)
    is_self[missing, k] = True
    keep = ~is_self
    return idx[keep].reshape(n, k), dist[keep].reshape(n, k)


def mean_nn_spacing(points):
    """Mean distance from each point to its nearest other point."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points)
    if len(pts) < 2:
        return 0.0
    _, dist = knn_excluding_self(SpatialIndex(pts), 1)
    return float(dist.mean())


def farthest_point_sample(cloud, n):
    """Greedy max-min subset, seeded at index 0, ties to the smaller index."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    total = len(pts)
    if not 1 <= n <= total:
        raise InvalidArgumentError(f"n must be in [1, {total}], got {n}")
    picked = np.empty(n, dtype=np.int64)
    picked[0] = 0
    diff = pts - pts[0]
    min_d = (diff * diff).sum(axis=1)
    for t in range(1, n):
        nxt = int(np.argmax(min_d))
        picked[t] = nxt
        diff = pts - pts[nxt]
        min_d = np.minimum(min_d, (diff * diff).sum(axis=1))
    return picked


@dataclass
class Patch:
    cloud: PointCloud
    indices: np.ndarray
    seed: int = field(default=-1)


def patch_around(cloud: PointCloud, seed_index, patch_size, index: Optional[SpatialIndex] = None):
    index = index or SpatialIndex(cloud.points)
    idx, _ = index.knn_batch(cloud.points[seed_index : seed_index + 1], patch_size)
    sel = idx[0]
    return Patch(PointCloud(cloud.points[sel]), sel, int(seed_index))


def extract_patches(cloud: PointCloud, patch_size, num_patches, coverage=False):
    """Split ``cloud`` into FPS-seeded nearest-neighbor patches.

    With ``coverage=True`` extra FPS seeds are appended until every point
    belongs to at least one patch.
    """
    n = len(cloud)
    if not 1 <= patch_size <= n:
        raise InvalidArgumentError(f"patch_size must be in [1, {n}], got {patch_size}")
    if num_patches < 1:
        raise InvalidArgumentError("num_patches must be >= 1")
    index = SpatialIndex(cloud.points)
    seeds = farthest_point_sample(cloud, min(num_patches, n))
    patches = [patch_around(cloud, s, patch_size, index) for s in seeds]
    if coverage:
        covered = np.zeros(n, dtype=bool)
        for p in patches:
            covered[p.indices] = True
        while not covered.all():
            # next seed: the uncovered point farthest from existing seeds
            seed_pts = cloud.points[[p.seed for p in patches]]
            d = pairwise_distances(cloud.points, seed_pts).min(axis=1)
            d[covered] = -1.0
            s = int(np.argmax(d))
            p = patch_around(cloud, s, patch_size, index)
            covered[p.indices] = True
            patches.append(p)
    return patches


def merge_patches(base: PointCloud, patches, mode="last"):
    """Write patch coordinates back into a copy of ``base``.

    ``mode="last"`` lets later patches overwrite earlier ones; ``"average"``
    averages every patch that touched a point.
    """
    out = base.points.copy()
    if mode == "last":
        for p in patches:
            out[p.indices] = p.cloud.points
    elif mode == "average":
        acc = np.zeros_like(out)
        cnt = np.zeros(len(out))
        for p in patches:
            np.add.at(acc, p.indices, p.cloud.points)
            np.add.at(cnt, p.indices, 1.0)
        hit = cnt > 0
        out[hit] = acc[hit] / cnt[hit, None]
    else:
        raise InvalidArgumentError(f"unknown merge mode {mode!r}")
    return base.with_points(out)
