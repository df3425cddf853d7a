"""Training and evaluation loops."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import NoGroundWarning, extract_instances, global_augment, load_bank, paste_instances
from .checkpoint import load_checkpoint, save_checkpoint
from .cloud import PointCloud, preprocess, propagate_labels
from .config import RunConfig
from .dataio import (BoxSpec, CylinderSpec, GroundSpec, SceneSpec, load_labeled_scan, read_scan,
                     sequence_files, synth_scene, write_predictions)
from .errors import EmptyInputError, NonFiniteError
from .losses import total_loss
from .metrics import ConfusionMatrix
from .network import NetworkParams, forward, init_params, predict, prepare
from .optim import AdamWState, adamw_step, lr_at

log = logging.getLogger("pointplane")


@dataclass
class ScanItem:
    """A scan the loops can load on demand. ``group`` names the output subdirectory."""

    scan_id: str
    loader: object
    group: str = ""
    name: str = ""

    def load(self) -> PointCloud:
        return self.loader()


# ------------------------------------------------------------- datasets

def synthetic_classes(num_classes: int, ignore_index: int) -> tuple:
    """(ground, box, cylinder) training ids used for synthetic scenes."""
    if num_classes >= 10 and ignore_index not in (9, 1, 6):
        return 9, 1, 6
    usable = [c for c in range(num_classes) if c != ignore_index]
    if len(usable) < 2:
        raise EmptyInputError("synthetic data needs at least two non-ignored classes")
    return usable[0], usable[1], usable[min(2, len(usable) - 1)]


def random_scene(seed: int, points: int, classes: tuple, radius: float = 15.0) -> PointCloud:
    """One randomised ground + box + cylinder scene of about ``points`` points."""
    rng = np.random.default_rng(seed)
    ground_cls, box_cls, cyl_cls = classes
    n_box, n_cyl = max(2, int(0.28 * points)), max(2, int(0.17 * points))
    n_ground = max(2, points - n_box - n_cyl)
    r_box, a_box = rng.uniform(5, 0.8 * radius), rng.uniform(0, 2 * math.pi)
    a_cyl = a_box + rng.uniform(0.5, 2 * math.pi - 0.5)
    r_cyl = rng.uniform(4, 0.8 * radius)
    spec = SceneSpec(
        ground=GroundSpec(n_ground, radius, 1.0, -1.7, ground_cls),
        boxes=(BoxSpec((r_box * math.cos(a_box), r_box * math.sin(a_box)),
                       (rng.uniform(3, 5), rng.uniform(1.5, 2.2), rng.uniform(1.3, 1.8)),
                       rng.uniform(0, math.pi), n_box, box_cls),),
        cylinders=(CylinderSpec((r_cyl * math.cos(a_cyl), r_cyl * math.sin(a_cyl)),
                                rng.uniform(0.2, 0.5), rng.uniform(1.5, 2.0), n_cyl, cyl_cls),),
    )
    return synth_scene(spec, seed=int(rng.integers(2 ** 31)))


def dataset(config: RunConfig, split: str) -> list:
    """Scan items of the ``"train"`` or ``"val"`` split."""
    d = config.data
    if d.kind == "synthetic":
        classes = synthetic_classes(d.class_map.num_classes, d.ignore_index)
        count = d.synthetic_train_scenes if split == "train" else d.synthetic_val_scenes
        base = 0 if split == "train" else 1_000_000
        radius = min(15.0, abs(d.crop.x_min), d.crop.x_max, abs(d.crop.y_min), d.crop.y_max)
        items = []
        for i in range(count):
            seed = config.seed * 7919 + base + i
            items.append(ScanItem(f"synthetic-{split}/{i:06d}",
                                  lambda s=seed: random_scene(s, d.synthetic_points, classes, radius),
                                  f"synthetic-{split}", f"{i:06d}"))
        return items
    sequences = d.train_sequences if split == "train" else d.val_sequences
    items = []
    for seq in sequences:
        for scan, label in sequence_files(d.root, seq):
            if label is None:
                loader = (lambda s=scan: read_scan(s))
            else:
                loader = (lambda s=scan, lab=label: load_labeled_scan(s, lab, d.class_map))
            items.append(ScanItem(f"{seq}/{scan.stem}", loader, seq, scan.stem))
    return items


# ------------------------------------------------------------- training

@dataclass
class TrainState:
    step: int
    optimizer: AdamWState
    rng: np.random.Generator
    best_miou: float = -math.inf
    best_epoch: int = -1


@dataclass
class TrainResult:
    params: NetworkParams
    log: list
    checkpoint: Path | None
    log_path: Path
    state: TrainState


def _dtype(config: RunConfig):
    return np.float64 if config.dtype == "float64" else np.float32


def _load_training_scan(item: ScanItem, config: RunConfig, rng, bank):
    cloud = item.load()
    if cloud.labels is None:
        raise EmptyInputError(f"scan {item.scan_id} has no labels; it cannot be used for training")
    cloud.validate_labels(config.network.num_classes, config.data.ignore_index)
    if config.global_augment is not None:
        cloud = global_augment(cloud, rng, config.global_augment)
    if config.cutmix is not None and bank:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NoGroundWarning)
            cloud = paste_instances(cloud, bank, config.cutmix, rng)
        if caught:
            log.info("scan %s: no ground points, nothing pasted", item.scan_id)
    processed, _ = preprocess(cloud, config.data.voxel_size, config.data.crop)
    if len(processed) < 2 or (processed.labels != config.data.ignore_index).sum() == 0:
        log.warning("scan %s: fewer than two usable points after preprocessing; skipped", item.scan_id)
        return None
    return processed


def _build_bank(config: RunConfig, items: list) -> list:
    if config.cutmix is None:
        return []
    if config.bank_dir:
        return load_bank(config.bank_dir)
    bank = []
    for item in items:
        cloud = item.load()
        if cloud.labels is not None and cloud.instance_ids is not None:
            bank.extend(extract_instances(cloud, config.cutmix, item.scan_id))
    if not bank:
        log.warning("no rare-class instances found; instance pasting disabled")
    return bank


def _check_finite(loss, ids):
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"non-finite loss on scan(s) {', '.join(ids)}")


def train(config: RunConfig, params: NetworkParams | None = None) -> TrainResult:
    """Run the full schedule; keeps the best-validation checkpoint and a CSV log.

    Without a validation split the training scans are evaluated instead.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = _dtype(config)
    if params is None:
        params = init_params(config.network, config.seed, dtype)
    train_items = dataset(config, "train")
    if not train_items:
        raise EmptyInputError("the training split is empty")
    val_items = dataset(config, "val") or train_items
    bank = _build_bank(config, train_items)
    ocfg = config.optim
    steps_per_epoch = math.ceil(len(train_items) / ocfg.batch_size)
    state = TrainState(0, AdamWState(), np.random.default_rng(config.seed))
    ckpt_path = out_dir / "best.ckpt"
    log_path = out_dir / "train_log.csv"
    rows = []
    saved = None

    for epoch in range(ocfg.total_epochs):
        order = state.rng.permutation(len(train_items))
        losses, lr = [], 0.0
        for start in range(0, len(order), ocfg.batch_size):
            chosen = [train_items[i] for i in order[start:start + ocfg.batch_size]]
            clouds, ids = [], []
            for item in chosen:
                processed = _load_training_scan(item, config, state.rng, bank)
                if processed is not None:
                    clouds.append(processed)
                    ids.append(item.scan_id)
            lr = lr_at(state.step, steps_per_epoch, ocfg)
            state.step += 1
            if not clouds:
                continue
            params.zero_grad()
            if config.batch_mode == "concat":
                batch = prepare(clouds, config.network)
                loss = total_loss(forward(batch, params, "train"), batch.labels, config.loss)
                _check_finite(loss, ids)
                loss.backward()
                losses.append(float(loss.data))
            else:
                for cloud, scan_id in zip(clouds, ids):
                    batch = prepare(cloud, config.network)
                    loss = total_loss(forward(batch, params, "train"), batch.labels, config.loss)
                    _check_finite(loss, [scan_id])
                    loss.backward()
                    losses.append(float(loss.data))
            named = params.parameters()
            try:
                adamw_step({k: t.data for k, t in named.items()}, {k: t.grad for k, t in named.items()},
                           state.optimizer, lr, ocfg)
            except NonFiniteError as exc:
                raise NonFiniteError(f"{exc} (batch {', '.join(ids)})") from exc

        report = evaluate(config, params, val_items)
        miou = report.confusion.miou() if report.confusion.total else float("nan")
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        rows.append({"epoch": epoch + 1, "loss": mean_loss, "lr": lr, "miou": miou})
        log.info("epoch %d  loss %.6f  lr %.3g  mIoU %.4f", epoch + 1, mean_loss, lr, miou)
        if saved is None or miou > state.best_miou:
            state.best_miou, state.best_epoch = miou, epoch + 1
            save_checkpoint(ckpt_path, params)
            saved = ckpt_path
        _write_log(log_path, rows)
    return TrainResult(params, rows, saved, log_path, state)


def _write_log(path: Path, rows: list):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "lr", "miou"])
        writer.writeheader()
        for r in rows:
            writer.writerow({"epoch": r["epoch"], "loss": repr(r["loss"]),
                             "lr": repr(r["lr"]), "miou": repr(r["miou"])})


# ----------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    point_counts: dict = field(default_factory=dict)   # scan id -> raw point count
    label_files: list = field(default_factory=list)

    def text(self, class_names=None) -> str:
        if self.confusion.total == 0:
            return "no labelled points evaluated"
        return self.confusion.table(list(class_names) if class_names else None)


def predict_full(cloud: PointCloud, config: RunConfig, params: NetworkParams, scan_id: str = "") -> np.ndarray:
    """Training-id prediction for every raw point, including voxel-merged and cropped ones."""
    processed, kept = preprocess(cloud, config.data.voxel_size, config.data.crop)
    if len(processed) == 0:
        raise EmptyInputError(f"scan {scan_id or '?'}: no points left after cropping")
    pred = predict(prepare(PointCloud(processed.coords, processed.remission), config.network), params)
    return propagate_labels(cloud, processed, pred, kept)


def evaluate(config: RunConfig, params: NetworkParams, items: list | None = None,
             write_labels=None) -> EvalReport:
    """Confusion matrix over ``items`` (default: the validation split, else training)."""
    if items is None:
        items = dataset(config, "val") or dataset(config, "train")
    cm = ConfusionMatrix(config.network.num_classes, config.data.ignore_index)
    report = EvalReport(cm)
    for item in items:
        cloud = item.load()
        full = predict_full(cloud, config, params, item.scan_id)
        report.point_counts[item.scan_id] = len(cloud)
        if cloud.labels is not None:
            cm.update(full, cloud.labels)
        if write_labels is not None:
            target = Path(write_labels) / item.group / f"{item.name}.label"
            target.parent.mkdir(parents=True, exist_ok=True)
            write_predictions(target, full, config.data.class_map)
            report.label_files.append(target)
    return report


def evaluate_checkpoint(config: RunConfig, checkpoint, write_labels=None, items=None) -> EvalReport:
    params = init_params(config.network, config.seed, _dtype(config))
    load_checkpoint(checkpoint, params)
    return evaluate(config, params, items, write_labels)
