"""Training-time augmentation.

Global rigid jitter (yaw rotation, axis flips, isotropic scale) and the
geometry-aware instance paste: rare-class objects are cut out of labelled
scans, re-sampled beam by beam to the point density expected at their new
distance from the sensor, and dropped onto ground points of another scene.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import ConfigError, EmptyInputError, FormatError


class NoGroundWarning(UserWarning):
    """Raised through :mod:`warnings` when a scene has no ground points to paste on."""


@dataclass(frozen=True)
class GlobalAugmentConfig:
    rotate_prob: float = 1.0
    flip_prob: float = 0.5
    scale_prob: float = 1.0
    scale_range: tuple = (0.95, 1.05)


@dataclass(frozen=True)
class CutMixConfig:
    rare_classes: frozenset = frozenset()
    ground_classes: frozenset = frozenset()
    max_paste: int = 10
    vertical_fov_step: float = 0.0073
    rate_clamp: tuple = (0.5, 2.0)
    min_instance_points: int = 10
    max_retries: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rare_classes", frozenset(int(c) for c in self.rare_classes))
        object.__setattr__(self, "ground_classes", frozenset(int(c) for c in self.ground_classes))
        lo, hi = self.rate_clamp
        if not lo <= 1 <= hi or lo <= 0:
            raise ConfigError(f"rate_clamp must satisfy 0 < min <= 1 <= max, got {self.rate_clamp}")
        if self.vertical_fov_step <= 0:
            raise ConfigError("vertical_fov_step must be positive")
        if self.max_paste < 0:
            raise ConfigError("max_paste must be >= 0")


@dataclass
class InstanceRecord:
    """An object cut from a scan, centred in x, y and resting on z = 0."""

    points: np.ndarray
    remission: np.ndarray
    class_id: int
    source_distance: float
    source_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.remission = np.asarray(self.remission, dtype=np.float64).reshape(-1)
        if len(self.remission) != len(self.points):
            raise ValueError("instance remission and points differ in length")

    def __len__(self):
        return len(self.points)

    @property
    def footprint_radius(self) -> float:
        if len(self.points) == 0:
            return 0.0
        return float(np.hypot(self.points[:, 0], self.points[:, 1]).max())


@dataclass
class BeamGroups:
    groups: list            # index arrays into the instance points, by ascending z-bin
    bins: np.ndarray        # z-bin id of each group
    bin_height: float

    def __len__(self):
        return len(self.groups)


# ------------------------------------------------------------ global jitter

def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def global_augment(cloud: PointCloud, rng: np.random.Generator,
                   cfg: GlobalAugmentConfig = GlobalAugmentConfig(),
                   theta=None, flip=None, scale=None) -> PointCloud:
    """Random yaw, x/y flips and scale. Any of ``theta``, ``flip`` (a pair of
    bools for x and y) or ``scale`` may be forced instead of drawn."""
    if theta is None:
        theta = rng.uniform(0, 2 * math.pi) if rng.random() < cfg.rotate_prob else 0.0
    if flip is None:
        flip = (bool(rng.random() < cfg.flip_prob), bool(rng.random() < cfg.flip_prob))
    if scale is None:
        scale = rng.uniform(*cfg.scale_range) if rng.random() < cfg.scale_prob else 1.0
    xyz = cloud.coords @ rotation_z(theta).T
    sign = np.array([-1.0 if flip[0] else 1.0, -1.0 if flip[1] else 1.0, 1.0])
    xyz = xyz * sign * scale
    return PointCloud(xyz, cloud.remission.copy(),
                      None if cloud.labels is None else cloud.labels.copy(),
                      None if cloud.instance_ids is None else cloud.instance_ids.copy())


# --------------------------------------------------------------- instances

def extract_instances(cloud: PointCloud, cfg: CutMixConfig, source_id: str = "") -> list:
    """One record per (rare class, instance id) group with enough points.

    Instance id 0 marks points without an object and is skipped.
    """
    if cloud.labels is None or cloud.instance_ids is None:
        raise FormatError("instance extraction needs semantic labels and instance ids")
    records = []
    rare = np.isin(cloud.labels, sorted(cfg.rare_classes)) & (cloud.instance_ids > 0)
    keys = np.unique(np.column_stack([cloud.labels[rare], cloud.instance_ids[rare]]), axis=0)
    for cls, inst in keys:
        idx = np.flatnonzero((cloud.labels == cls) & (cloud.instance_ids == inst))
        if len(idx) < cfg.min_instance_points:
            continue
        pts = cloud.coords[idx]
        centroid = pts.mean(axis=0)
        local = pts - np.array([centroid[0], centroid[1], pts[:, 2].min()])
        records.append(InstanceRecord(local, cloud.remission[idx].copy(), int(cls),
                                      float(np.linalg.norm(centroid)),
                                      f"{source_id}#{int(inst)}" if source_id else str(int(inst))))
    return records


def beam_quantize(instance: InstanceRecord, distance: float, cfg: CutMixConfig) -> BeamGroups:
    """Partition points into z-slices one beam spacing tall at ``distance``."""
    if not distance > 0:
        raise ConfigError(f"placement distance must be positive, got {distance}")
    bin_height = distance * math.tan(cfg.vertical_fov_step)
    ratio = instance.points[:, 2] / bin_height
    # a z exactly on a bin boundary (e.g. 0.3 with 0.1 bins) must not fall one bin low to rounding
    nearest = np.rint(ratio)
    ratio = np.where(np.abs(ratio - nearest) <= 1e-9 * np.maximum(1.0, np.abs(nearest)), nearest, ratio)
    bins = np.floor(ratio).astype(np.int64)
    ids, inverse = np.unique(bins, return_inverse=True)
    groups = [np.flatnonzero(inverse == g) for g in range(len(ids))]
    return BeamGroups(groups, ids, bin_height)


def resample_rate(instance: InstanceRecord, d_target: float, cfg: CutMixConfig) -> float:
    lo, hi = cfg.rate_clamp
    return float(np.clip(instance.source_distance / d_target, lo, hi))


def resample_instance(instance: InstanceRecord, d_target: float, cfg: CutMixConfig,
                      rng: np.random.Generator, rate: float | None = None) -> InstanceRecord:
    """Add or drop beam groups so the point count follows the new distance.

    The output holds ``round(rate * M)`` points (at least one). Closer than
    the source (rate > 1) the extra points are copies of randomly chosen
    beam groups shifted up by half a bin; farther (rate < 1) randomly chosen
    groups are removed. Whole groups are used while they fit the quota and
    a random part of one more group fills the remainder, which keeps the
    count monotone in ``d_target``.
    """
    if len(instance) == 0:
        raise EmptyInputError("cannot resample an empty instance")
    if rate is None:
        rate = resample_rate(instance, d_target, cfg)
    if rate == 1.0:
        return _copy_instance(instance)
    m = len(instance)
    beams = beam_quantize(instance, d_target, cfg)
    order = rng.permutation(len(beams))
    if rate > 1.0:
        quota = int(round((rate - 1.0) * m))
    else:
        quota = min(m - 1, int(round((1.0 - rate) * m)))
    picked = _fill_quota([beams.groups[i] for i in order], quota, rng)
    pts, rem = instance.points, instance.remission
    if rate > 1.0:
        extra = pts[picked] + np.array([0.0, 0.0, beams.bin_height / 2])
        new_pts = np.concatenate([pts, extra])
        new_rem = np.concatenate([rem, rem[picked]])
    else:
        keep = np.ones(m, dtype=bool)
        keep[picked] = False
        new_pts, new_rem = pts[keep], rem[keep]
    return InstanceRecord(new_pts, new_rem, instance.class_id, instance.source_distance,
                          instance.source_id)


def _fill_quota(groups, quota, rng):
    """Indices of whole groups (in the given order) plus part of the next, totalling ``quota``."""
    chosen, left = [], quota
    for grp in groups:
        if left == 0:
            break
        if len(grp) <= left:
            chosen.append(grp)
            left -= len(grp)
        else:
            chosen.append(np.sort(rng.choice(grp, size=left, replace=False)))
            left = 0
    return np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)


def _copy_instance(inst: InstanceRecord) -> InstanceRecord:
    return InstanceRecord(inst.points.copy(), inst.remission.copy(), inst.class_id,
                          inst.source_distance, inst.source_id)


def paste_instances(scene: PointCloud, bank: list, cfg: CutMixConfig,
                    rng: np.random.Generator) -> PointCloud:
    """Paste up to ``max_paste`` bank instances onto ground points of ``scene``.

    Existing scene points are never moved or relabelled; pasted points are
    appended with the instance class and fresh instance ids. Placements
    whose bounding circle overlaps an earlier one are redrawn up to
    ``max_retries`` times, then skipped.
    """
    if scene.labels is None:
        raise FormatError("paste_instances needs a labelled scene")
    if not bank:
        raise EmptyInputError("instance bank is empty")
    if cfg.max_paste == 0:
        return _copy_scene(scene)
    ground = np.flatnonzero(np.isin(scene.labels, sorted(cfg.ground_classes)))
    if len(ground) == 0:
        warnings.warn("scene has no ground-class points; nothing pasted", NoGroundWarning,
                      stacklevel=2)
        return _copy_scene(scene)

    by_class = {}
    for inst in bank:
        by_class.setdefault(inst.class_id, []).append(inst)
    classes = sorted(by_class)
    next_id = int(scene.instance_ids.max()) + 1 if scene.instance_ids is not None and len(scene) else 1

    placed = []  # (x, y, radius)
    coords, rems, labels, inst_ids = [], [], [], []
    for _ in range(cfg.max_paste):
        cls = classes[rng.integers(len(classes))]
        inst = by_class[cls][rng.integers(len(by_class[cls]))]
        for _attempt in range(cfg.max_retries):
            anchor = scene.coords[ground[rng.integers(len(ground))]]
            yaw = rng.uniform(0, 2 * math.pi)
            d_target = float(np.linalg.norm(anchor))
            if d_target <= 0:
                continue
            sampled = resample_instance(inst, d_target, cfg, rng)
            radius = sampled.footprint_radius
            if any(math.hypot(anchor[0] - x, anchor[1] - y) < radius + r for x, y, r in placed):
                continue
            local = sampled.points @ rotation_z(yaw).T
            # keep the centroid on the anchor after duplication/removal
            local[:, :2] -= local[:, :2].mean(axis=0)
            local[:, 2] -= local[:, 2].min()
            coords.append(local + anchor)
            rems.append(sampled.remission)
            labels.append(np.full(len(sampled), sampled.class_id, dtype=np.int64))
            inst_ids.append(np.full(len(sampled), next_id, dtype=np.int64))
            next_id += 1
            placed.append((anchor[0], anchor[1], radius))
            break
    if not coords:
        return _copy_scene(scene)
    out_inst = None
    if scene.instance_ids is not None:
        out_inst = np.concatenate([scene.instance_ids] + inst_ids)
    return PointCloud(np.concatenate([scene.coords] + coords),
                      np.concatenate([scene.remission] + rems),
                      np.concatenate([scene.labels] + labels), out_inst)


def _copy_scene(scene: PointCloud) -> PointCloud:
    return scene.subset(np.arange(len(scene)))


# ---------------------------------------------------------- bank on disk

def save_bank(bank: list, directory) -> Path:
    """Write one ``.bin`` per instance (x, y, z, remission as little-endian f32)
    and a ``manifest.json`` describing them."""
    from .dataio import write_scan  # local import: dataio depends on this module's types

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, inst in enumerate(bank):
        name = f"instance_{i:06d}.bin"
        write_scan(directory / name, PointCloud(inst.points, inst.remission))
        entries.append({"file": name, "class_id": inst.class_id, "point_count": len(inst),
                        "source_distance": inst.source_distance, "source_id": inst.source_id})
    (directory / "manifest.json").write_text(json.dumps({"version": 1, "instances": entries}, indent=1))
    return directory


def load_bank(directory) -> list:
    from .dataio import read_scan

    directory = Path(directory)
    manifest = directory / "manifest.json"
    if not manifest.exists():
        raise FormatError(f"no manifest.json in {directory}")
    data = json.loads(manifest.read_text())
    bank = []
    for e in data["instances"]:
        cloud = read_scan(directory / e["file"])
        if len(cloud) != e["point_count"]:
            raise FormatError(f"{e['file']}: manifest says {e['point_count']} points, file has {len(cloud)}")
        bank.append(InstanceRecord(cloud.coords, cloud.remission, int(e["class_id"]),
                                   float(e["source_distance"]), e.get("source_id", "")))
    return bank
