"""Point cloud container and geometric preprocessing.

Everything here is a pure function of its inputs: feature construction,
voxel downsampling, box cropping, k-nearest-neighbour tables and
nearest-neighbour propagation of predictions back onto a full scan.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, EmptyInputError

IGNORE_INDEX = 0


@dataclass
class PointCloud:
    coords: np.ndarray
    remission: np.ndarray
    labels: np.ndarray | None = None
    instance_ids: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        n = len(self.coords)
        self.remission = np.asarray(self.remission, dtype=np.float64).reshape(-1)
        if len(self.remission) != n:
            raise ValueError(f"remission has {len(self.remission)} entries for {n} points")
        if not np.isfinite(self.coords).all():
            raise ValueError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != n:
                raise ValueError(f"labels has {len(self.labels)} entries for {n} points")
        if self.instance_ids is not None:
            self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64).reshape(-1)
            if len(self.instance_ids) != n:
                raise ValueError(f"instance_ids has {len(self.instance_ids)} entries for {n} points")
            if (self.instance_ids < 0).any():
                raise ValueError("instance ids must be non-negative")

    def __len__(self):
        return len(self.coords)

    def subset(self, index) -> "PointCloud":
        """Points selected by an integer index array or boolean mask."""
        return PointCloud(
            self.coords[index],
            self.remission[index],
            None if self.labels is None else self.labels[index],
            None if self.instance_ids is None else self.instance_ids[index],
        )

    def validate_labels(self, num_classes: int, ignore_index: int = IGNORE_INDEX):
        if self.labels is None:
            return
        ok = ((self.labels >= 0) & (self.labels < num_classes)) | (self.labels == ignore_index)
        if not ok.all():
            bad = self.labels[~ok][0]
            raise ValueError(f"label {bad} outside [0, {num_classes}) and not the ignore id")

    @staticmethod
    def concat(clouds) -> "PointCloud":
        clouds = list(clouds)
        has_labels = all(c.labels is not None for c in clouds)
        has_inst = all(c.instance_ids is not None for c in clouds)
        return PointCloud(
            np.concatenate([c.coords for c in clouds]) if clouds else np.zeros((0, 3)),
            np.concatenate([c.remission for c in clouds]) if clouds else np.zeros(0),
            np.concatenate([c.labels for c in clouds]) if has_labels and clouds else None,
            np.concatenate([c.instance_ids for c in clouds]) if has_inst and clouds else None,
        )


@dataclass(frozen=True)
class CropBounds:
    x_min: float = -50.0
    x_max: float = 50.0
    y_min: float = -50.0
    y_max: float = 50.0
    z_min: float = -3.0
    z_max: float = 2.0

    def __post_init__(self):
        for axis in "xyz":
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            if not lo < hi:
                raise ConfigError(f"crop bounds: {axis}_min={lo} must be below {axis}_max={hi}")

    def axis(self, name: str) -> tuple[float, float]:
        return getattr(self, f"{name}_min"), getattr(self, f"{name}_max")

    @property
    def lower(self):
        return np.array([self.x_min, self.y_min, self.z_min])

    @property
    def upper(self):
        return np.array([self.x_max, self.y_max, self.z_max])


def build_features(cloud: PointCloud) -> np.ndarray:
    """N x 5 input features: x, y, z, remission, range."""
    if len(cloud) == 0:
        raise EmptyInputError("cannot build features for an empty cloud")
    rng = np.sqrt((cloud.coords ** 2).sum(axis=1))
    return np.column_stack([cloud.coords, cloud.remission, rng])


def voxel_downsample(cloud: PointCloud, resolution: float) -> tuple[PointCloud, np.ndarray]:
    """Keep the first point (input order) of every occupied voxel.

    Returns the reduced cloud and an index map sending each original point
    to the position of its voxel representative in the reduced cloud.
    """
    if not resolution > 0:
        raise ConfigError(f"voxel resolution must be positive, got {resolution}")
    kept, index_map = _voxel_representatives(cloud.coords, resolution)
    return cloud.subset(kept), index_map


def _voxel_representatives(coords: np.ndarray, resolution: float):
    if len(coords) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    keys = np.floor(coords / resolution).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # np.unique orders voxels lexicographically; re-rank them by first appearance
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return first[order], rank[inverse]


def crop(cloud: PointCloud, bounds: CropBounds) -> tuple[PointCloud, np.ndarray]:
    mask = ((cloud.coords >= bounds.lower) & (cloud.coords <= bounds.upper)).all(axis=1)
    return cloud.subset(mask), mask


def _sq_dists(coords: np.ndarray, rows: np.ndarray, cand: np.ndarray) -> np.ndarray:
    diff = coords[cand] - coords[rows][:, None, :]
    return (diff ** 2).sum(axis=-1)


def _order_rows(rows: np.ndarray, cand: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Sort candidate columns by (not self, distance, index) per row."""
    o = np.argsort(cand, axis=1, kind="stable")
    cand, d2 = np.take_along_axis(cand, o, 1), np.take_along_axis(d2, o, 1)
    o = np.argsort(d2, axis=1, kind="stable")
    cand, d2 = np.take_along_axis(cand, o, 1), np.take_along_axis(d2, o, 1)
    o = np.argsort(cand != rows[:, None], axis=1, kind="stable")
    return np.take_along_axis(cand, o, 1), np.take_along_axis(d2, o, 1)


def knn(cloud: PointCloud, k: int) -> np.ndarray:
    """N x k neighbour table, self first, ties broken by lower point index.

    Rows of clouds with fewer than k points are padded by repeating the
    last valid neighbour.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    n = len(cloud)
    if n == 0:
        raise EmptyInputError("cannot build a neighbour table for an empty cloud")
    coords = cloud.coords
    kk = min(k, n)
    rows = np.arange(n)
    if n <= kk + 4:
        cand = np.broadcast_to(np.arange(n), (n, n)).copy()
    else:
        # a few spare candidates let us detect ties that straddle the k-th slot
        _, cand = cKDTree(coords).query(coords, k=kk + 4)
        cand = cand.astype(np.int64)
    d2 = _sq_dists(coords, rows, cand)
    cand, d2 = _order_rows(rows, cand, d2)
    if cand.shape[1] > kk:
        spare = d2[:, -1]
        kth = d2[:, kk - 1]
        unsure = (spare - kth <= 1e-12 * np.maximum(spare, 1e-300)) | (cand[:, 0] != rows)
        for i in np.flatnonzero(unsure):
            full = np.arange(n)[None, :]
            dd = _sq_dists(coords, rows[i:i + 1], full)
            c, _ = _order_rows(rows[i:i + 1], full, dd)
            cand[i, :kk] = c[0, :kk]
    table = cand[:, :kk]
    if kk < k:
        table = np.concatenate([table, np.repeat(table[:, -1:], k - kk, axis=1)], axis=1)
    return np.ascontiguousarray(table)


def propagate_labels(full: PointCloud, processed: PointCloud, predictions, kept=None) -> np.ndarray:
    """Give each point of ``full`` the prediction of its nearest processed point.

    ``kept`` (indices into ``full`` of the processed points, as returned by
    :func:`preprocess`) pins surviving points to their own prediction even
    when another processed point is equally near.
    """
    predictions = np.asarray(predictions)
    if len(processed) == 0:
        raise EmptyInputError("cannot propagate from an empty processed cloud")
    if len(predictions) != len(processed):
        raise ValueError(
            f"{len(predictions)} predictions for {len(processed)} processed points")
    if len(full) == 0:
        return predictions[:0].copy()
    _, idx = cKDTree(processed.coords).query(full.coords, k=1)
    out = predictions[idx]
    if kept is not None:
        out[np.asarray(kept)] = predictions
    return out


def preprocess(cloud: PointCloud, resolution: float = 0.1, bounds: CropBounds | None = None):
    """Voxel downsample then crop. Returns (processed cloud, indices into ``cloud``)."""
    if not resolution > 0:
        raise ConfigError(f"voxel resolution must be positive, got {resolution}")
    kept, _ = _voxel_representatives(cloud.coords, resolution)
    down = cloud.subset(kept)
    if bounds is not None:
        down, mask = crop(down, bounds)
        kept = kept[mask]
    return down, kept
