"""SemanticKITTI-layout scan/label files and synthetic scenes.

Scan files are consecutive 16-byte records of four little-endian float32
values (x, y, z, remission). Label files are consecutive little-endian
uint32 values: semantic id in the low 16 bits, instance id in the high 16.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import IGNORE_INDEX, PointCloud
from .errors import ConfigError, FormatError

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")

# raw SemanticKITTI id -> training id (0 = unlabeled / ignore)
SEMANTIC_KITTI_LEARNING_MAP = {
    0: 0, 1: 0, 10: 1, 11: 2, 13: 5, 15: 3, 16: 5, 18: 4, 20: 5, 30: 6, 31: 7, 32: 8,
    40: 9, 44: 10, 48: 11, 49: 12, 50: 13, 51: 14, 52: 0, 60: 9, 70: 15, 71: 16, 72: 17,
    80: 18, 81: 19, 99: 0, 252: 1, 253: 7, 254: 6, 255: 8, 256: 5, 257: 5, 258: 4, 259: 5,
}
SEMANTIC_KITTI_LEARNING_MAP_INV = {
    0: 0, 1: 10, 2: 11, 3: 15, 4: 18, 5: 20, 6: 30, 7: 31, 8: 32, 9: 40, 10: 44,
    11: 48, 12: 49, 13: 50, 14: 51, 15: 70, 16: 71, 17: 72, 18: 80, 19: 81,
}
SEMANTIC_KITTI_CLASSES = [
    "unlabeled", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person",
    "bicyclist", "motorcyclist", "road", "parking", "sidewalk", "other-ground", "building",
    "fence", "vegetation", "trunk", "terrain", "pole", "traffic-sign",
]


@dataclass(frozen=True)
class ClassMap:
    """Raw dataset id <-> training id, total over raw ids via the ignore fallback."""

    learning_map: dict
    inverse: dict
    ignore_index: int = IGNORE_INDEX
    names: tuple = ()

    @classmethod
    def semantic_kitti(cls) -> "ClassMap":
        return cls(dict(SEMANTIC_KITTI_LEARNING_MAP), dict(SEMANTIC_KITTI_LEARNING_MAP_INV),
                   IGNORE_INDEX, tuple(SEMANTIC_KITTI_CLASSES))

    @classmethod
    def identity(cls, num_classes: int, ignore_index: int = IGNORE_INDEX) -> "ClassMap":
        ids = {i: i for i in range(num_classes)}
        return cls(ids, dict(ids), ignore_index)

    @property
    def num_classes(self) -> int:
        return max(max(self.learning_map.values(), default=0), max(self.inverse, default=0)) + 1

    def to_train(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.int64)
        table_size = max(max(self.learning_map, default=0), int(raw.max(initial=0))) + 1
        lut = np.full(table_size, self.ignore_index, dtype=np.int64)
        for k, v in self.learning_map.items():
            lut[k] = v
        return lut[raw]

    def to_raw(self, train_ids: np.ndarray) -> np.ndarray:
        train_ids = np.asarray(train_ids, dtype=np.int64)
        missing = set(np.unique(train_ids).tolist()) - set(self.inverse)
        if missing:
            raise FormatError(f"no raw dataset id for training class(es) {sorted(missing)}")
        lut = np.zeros(max(self.inverse) + 1, dtype=np.int64)
        for k, v in self.inverse.items():
            lut[k] = v
        return lut[train_ids]


# ------------------------------------------------------------------ files

def read_scan(path) -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % 16:
        whole = len(raw) - len(raw) % 16
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 16; "
                          f"trailing partial record at byte offset {whole}")
    data = np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(-1, 4)
    return PointCloud(data[:, :3].astype(np.float64), data[:, 3].astype(np.float64))


def write_scan(path, cloud: PointCloud):
    data = np.column_stack([cloud.coords, cloud.remission]).astype(SCAN_DTYPE)
    Path(path).write_bytes(data.tobytes())


def read_raw_labels(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 4; "
                          f"trailing partial record at byte offset {len(raw) - len(raw) % 4}")
    return np.frombuffer(raw, dtype=LABEL_DTYPE).copy()


def read_labels(path, class_map: ClassMap | None = None, expected_count: int | None = None):
    """(semantic training ids, instance ids). Without a class map the raw
    semantic ids are returned unchanged."""
    raw = read_raw_labels(path)
    if expected_count is not None and len(raw) != expected_count:
        raise FormatError(f"{path}: {len(raw)} labels for a scan of {expected_count} points")
    semantic = (raw & 0xFFFF).astype(np.int64)
    instance = (raw >> 16).astype(np.int64)
    if class_map is not None:
        semantic = class_map.to_train(semantic)
    return semantic, instance


def write_labels(path, semantic_raw, instance=None):
    semantic_raw = np.asarray(semantic_raw, dtype=np.int64)
    instance = np.zeros_like(semantic_raw) if instance is None else np.asarray(instance, dtype=np.int64)
    if (semantic_raw < 0).any() or (semantic_raw > 0xFFFF).any() \
            or (instance < 0).any() or (instance > 0xFFFF).any():
        raise FormatError("semantic and instance ids must fit in 16 bits")
    packed = (semantic_raw | (instance << 16)).astype(LABEL_DTYPE)
    Path(path).write_bytes(packed.tobytes())


def write_predictions(path, predictions, class_map: ClassMap):
    """Training-id predictions written as raw dataset ids with zero instance bits."""
    write_labels(path, class_map.to_raw(predictions))


def load_labeled_scan(scan_path, label_path, class_map: ClassMap) -> PointCloud:
    cloud = read_scan(scan_path)
    semantic, instance = read_labels(label_path, class_map, expected_count=len(cloud))
    return PointCloud(cloud.coords, cloud.remission, semantic, instance)


def sequence_dir(root, sequence: str) -> Path:
    """Directory holding ``velodyne/`` (and optionally ``labels/``) for a sequence."""
    for cand in (Path(root) / "sequences" / sequence, Path(root) / sequence, Path(sequence)):
        if (cand / "velodyne").is_dir():
            return cand
    raise FormatError(f"sequence {sequence!r} not found under {root}")


def sequence_files(root, sequence: str):
    """Sorted (scan, label-or-None) path pairs of one sequence."""
    seq = sequence_dir(root, sequence)
    scans = sorted((seq / "velodyne").glob("*.bin"))
    if not scans:
        raise FormatError(f"no scans found under {seq / 'velodyne'}")
    pairs = []
    for s in scans:
        lab = seq / "labels" / (s.stem + ".label")
        pairs.append((s, lab if lab.exists() else None))
    return pairs


# ------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class GroundSpec:
    points: int = 400
    radius: float = 20.0
    inner_radius: float = 2.0
    height: float = -1.7
    class_id: int = 9


@dataclass(frozen=True)
class BoxSpec:
    center: tuple = (8.0, 3.0)
    size: tuple = (4.0, 1.8, 1.5)
    yaw: float = 0.0
    points: int = 150
    class_id: int = 1


@dataclass(frozen=True)
class CylinderSpec:
    center: tuple = (6.0, -4.0)
    radius: float = 0.3
    height: float = 1.8
    points: int = 40
    class_id: int = 6


@dataclass(frozen=True)
class SceneSpec:
    """Primitives of a synthetic scene; instance ids follow list order from 1."""

    ground: GroundSpec | None = field(default_factory=GroundSpec)
    boxes: tuple = (BoxSpec(),)
    cylinders: tuple = (CylinderSpec(),)
    remission_noise: float = 0.05


def _remission(rng, class_id, n, noise):
    base = 0.15 + 0.7 * ((class_id * 0.618034) % 1.0)
    return np.clip(base + rng.normal(0, noise, n), 0.0, 1.0)


def synth_scene(spec: SceneSpec = SceneSpec(), seed: int = 0) -> PointCloud:
    """Deterministic labelled scene: ground disk, boxes, upright cylinders."""
    rng = np.random.default_rng(seed)
    coords, rem, labels, inst = [], [], [], []
    ground_z = spec.ground.height if spec.ground is not None else -1.7
    if spec.ground is not None:
        g = spec.ground
        if g.points < 0 or not 0 <= g.inner_radius < g.radius:
            raise ConfigError("ground needs points >= 0 and 0 <= inner_radius < radius")
        r = np.sqrt(rng.uniform(g.inner_radius ** 2, g.radius ** 2, g.points))
        a = rng.uniform(0, 2 * math.pi, g.points)
        coords.append(np.column_stack([r * np.cos(a), r * np.sin(a), np.full(g.points, g.height)]))
        rem.append(_remission(rng, g.class_id, g.points, spec.remission_noise))
        labels.append(np.full(g.points, g.class_id))
        inst.append(np.zeros(g.points, dtype=np.int64))
    next_id = 1
    for box in spec.boxes:
        if box.points < 0 or min(box.size) <= 0:
            raise ConfigError("box needs points >= 0 and positive size")
        coords.append(_box_surface(rng, box, ground_z))
        rem.append(_remission(rng, box.class_id, box.points, spec.remission_noise))
        labels.append(np.full(box.points, box.class_id))
        inst.append(np.full(box.points, next_id))
        next_id += 1
    for cyl in spec.cylinders:
        if cyl.points < 0 or cyl.radius <= 0 or cyl.height <= 0:
            raise ConfigError("cylinder needs points >= 0, positive radius and height")
        a = rng.uniform(0, 2 * math.pi, cyl.points)
        z = ground_z + rng.uniform(0, cyl.height, cyl.points)
        coords.append(np.column_stack([cyl.center[0] + cyl.radius * np.cos(a),
                                       cyl.center[1] + cyl.radius * np.sin(a), z]))
        rem.append(_remission(rng, cyl.class_id, cyl.points, spec.remission_noise))
        labels.append(np.full(cyl.points, cyl.class_id))
        inst.append(np.full(cyl.points, next_id))
        next_id += 1
    if not coords:
        return PointCloud(np.zeros((0, 3)), np.zeros(0), np.zeros(0, int), np.zeros(0, int))
    return PointCloud(np.concatenate(coords), np.concatenate(rem),
                      np.concatenate(labels).astype(np.int64), np.concatenate(inst).astype(np.int64))


def _box_surface(rng, box: BoxSpec, ground_z: float) -> np.ndarray:
    """Points on the four sides and top of a box, area-weighted."""
    lx, ly, lz = box.size
    faces = np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly])
    face = rng.choice(5, size=box.points, p=faces / faces.sum())
    u, v = rng.uniform(-0.5, 0.5, box.points), rng.uniform(-0.5, 0.5, box.points)
    x = np.select([face == 0, face == 1], [np.full_like(u, 0.5), np.full_like(u, -0.5)], u)
    y = np.select([face == 2, face == 3], [np.full_like(u, 0.5), np.full_like(u, -0.5)],
                  np.where(face < 2, u, v))
    z = np.where(face == 4, 0.5, v)
    local = np.column_stack([x * lx, y * ly, (z + 0.5) * lz])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    xy = local[:, :2] @ np.array([[c, s], [-s, c]])
    return np.column_stack([xy[:, 0] + box.center[0], xy[:, 1] + box.center[1], local[:, 2] + ground_z])
