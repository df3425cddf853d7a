"""Command-line entry point (``pointplane`` or ``python3 -m pointplane``).

Exit status is 0 on success; failures exit with the code of their error
category (see :mod:`pointplane.errors`). Set ``POINTPLANE_LOG_LEVEL``
(DEBUG, INFO, WARNING, ...) to control log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, PointPlaneError

log = logging.getLogger("pointplane")
LOG_ENV = "POINTPLANE_LOG_LEVEL"


def _setup_logging():
    level = os.environ.get(LOG_ENV, "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"{LOG_ENV}={level!r} is not a logging level")
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)


# -------------------------------------------------------------- commands

def cmd_project(args) -> int:
    from .cloud import build_features
    from .config import RunConfig, load_config
    from .dataio import read_scan
    from .projection import PlaneKind, project

    cfg = load_config(args.config, check_paths=False) if args.config else RunConfig()
    kind = PlaneKind.parse(args.plane)
    cloud = read_scan(args.scan)
    grid_cfg = cfg.network.planes.get(kind)
    feats = build_features(cloud)
    grid = project(feats, cloud, kind, grid_cfg)
    out = Path(args.out)
    names = ["x", "y", "z", "remission", "range"]
    if out.suffix.lower() == ".png":
        channel = names.index(args.channel) if args.channel != "occupancy" else None
        image = grid.occupancy.astype(np.float64) if channel is None else grid.cells[..., channel]
        _write_png(out, image, grid.occupancy > 0)
    elif out.suffix.lower() == ".csv":
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "count"] + names)
            rows, cols = np.nonzero(grid.occupancy)
            for r, c in zip(rows, cols):
                writer.writerow([r, c, grid.occupancy[r, c]] + [repr(float(v)) for v in grid.cells[r, c]])
    else:
        raise ConfigError(f"--out must end in .csv or .png, got {out.name}")
    h, w = grid.shape
    log.info("%s: %d points into %d of %d cells (%dx%d) -> %s", kind.value, len(cloud),
             int((grid.occupancy > 0).sum()), h * w, h, w, out)
    return 0


def _write_png(path, image, occupied):
    from PIL import Image

    img = np.zeros(image.shape, dtype=np.uint8)
    if occupied.any():
        vals = image[occupied]
        lo, hi = float(vals.min()), float(vals.max())
        scaled = (vals - lo) / (hi - lo) if hi > lo else np.ones_like(vals)
        img[occupied] = (31 + 224 * scaled).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def cmd_augment(args) -> int:
    from .augment import CutMixConfig, NoGroundWarning, extract_instances, load_bank, paste_instances, save_bank
    from .config import load_config
    from .dataio import (ClassMap, PointCloud, read_raw_labels, read_scan, sequence_files, write_labels,
                         write_scan)

    if args.config:
        cfg = load_config(args.config, check_paths=False)
        class_map = cfg.data.class_map
        cutmix = cfg.cutmix or CutMixConfig(rng_seed=cfg.seed)
    else:
        class_map = ClassMap.semantic_kitti()
        # SemanticKITTI: rare = bicyclist, motorcyclist, person; ground = road, parking, sidewalk, terrain
        cutmix = CutMixConfig(frozenset({6, 7, 8}), frozenset({9, 10, 11, 17}))
    if not cutmix.rare_classes or not cutmix.ground_classes:
        raise ConfigError("instance pasting needs rare_classes and ground_classes")
    pairs = [(s, lab) for s, lab in sequence_files(args.root, args.sequence) if lab is not None]
    if not pairs:
        raise FormatError(f"sequence {args.sequence} has no label files")
    bank_dir = Path(args.bank)
    if (bank_dir / "manifest.json").exists():
        bank = load_bank(bank_dir)
        log.info("loaded %d instances from %s", len(bank), bank_dir)
    else:
        bank = []
        for scan, lab in pairs:
            cloud = read_scan(scan)
            raw = read_raw_labels(lab)
            labeled = PointCloud(cloud.coords, cloud.remission, class_map.to_train(raw & 0xFFFF),
                                 (raw >> 16).astype(np.int64))
            bank.extend(extract_instances(labeled, cutmix, f"{args.sequence}/{scan.stem}"))
        save_bank(bank, bank_dir)
        log.info("built a bank of %d instances in %s", len(bank), bank_dir)
    if not bank:
        raise FormatError("instance bank is empty; no rare-class instances found")

    out = Path(args.out)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed if args.seed is not None else cutmix.rng_seed)
    pasted_total = 0
    for scan, lab in pairs:
        cloud = read_scan(scan)
        raw = read_raw_labels(lab)
        scene = PointCloud(cloud.coords, cloud.remission, class_map.to_train(raw & 0xFFFF),
                           (raw >> 16).astype(np.int64))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoGroundWarning)
            mixed = paste_instances(scene, bank, cutmix, rng)
        n0 = len(scene)
        extra = slice(n0, None)
        semantic = np.concatenate([raw[:n0] & 0xFFFF, class_map.to_raw(mixed.labels[extra])])
        write_scan(out / "velodyne" / scan.name, mixed)
        write_labels(out / "labels" / lab.name, semantic, mixed.instance_ids)
        pasted_total += len(mixed) - n0
    log.info("wrote %d augmented scans (%d pasted points) to %s", len(pairs), pasted_total, out)
    return 0


def cmd_train(args) -> int:
    from .config import load_config
    from .trainer import train

    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    result = train(cfg)
    last = result.log[-1]
    print(f"trained {len(result.log)} epochs; best mIoU {result.state.best_miou:.4f} "
          f"(epoch {result.state.best_epoch}); final loss {last['loss']:.6f}")
    print(f"checkpoint: {result.checkpoint}")
    print(f"log: {result.log_path}")
    return 0


def cmd_eval(args) -> int:
    from .config import load_config
    from .trainer import evaluate_checkpoint

    cfg = load_config(args.config)
    report = evaluate_checkpoint(cfg, args.checkpoint, args.write_labels)
    print(report.text(cfg.data.class_map.names or None))
    if args.write_labels:
        print(f"wrote {len(report.label_files)} label files under {args.write_labels}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<22} rel.err {r.error:.2e}  (tol {r.tolerance:g})")
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 6


def cmd_check_config(args) -> int:
    from .config import load_config

    cfg = load_config(args.config)
    n = cfg.network
    print(f"ok: {cfg.source}")
    print(f"  data: {cfg.data.kind}, {cfg.data.class_map.num_classes} classes "
          f"(ignore {cfg.data.ignore_index})")
    print(f"  network: L={n.layers} C={n.channels} K={n.k_neighbors}; planes "
          + ", ".join(f"{k.value} {n.planes.shape(k)[0]}x{n.planes.shape(k)[1]}" for k in n.plane_order))
    print(f"  optimiser: peak lr {cfg.optim.peak_lr}, {cfg.optim.total_epochs} epochs, "
          f"batch {cfg.optim.batch_size} ({cfg.batch_mode})")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointplane", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("project", help="export one plane projection of a scan as CSV or PNG")
    s.add_argument("scan", help="scan file (.bin)")
    s.add_argument("--plane", required=True, help="PolarGrid, XY, XZ, YZ or RangeImage")
    s.add_argument("--out", required=True, help="output path ending in .csv or .png")
    s.add_argument("--config", help="run config whose [grids] and crop define the grid")
    s.add_argument("--channel", default="range",
                   choices=["x", "y", "z", "remission", "range", "occupancy"], help="PNG channel")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("augment", help="paste bank instances into every scan of a sequence")
    s.add_argument("sequence", help="sequence name (under --root) or directory with velodyne/ and labels/")
    s.add_argument("--bank", required=True, help="instance bank directory (built from the sequence if absent)")
    s.add_argument("--out", required=True, help="output directory (velodyne/ and labels/ are created)")
    s.add_argument("--root", default=".", help="dataset root holding sequences/")
    s.add_argument("--config", help="run config supplying the class map and [augment] settings")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train a network from a config file")
    s.add_argument("config")
    s.add_argument("--output-dir", help="override [run] output_dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    s.add_argument("config")
    s.add_argument("checkpoint")
    s.add_argument("--write-labels", metavar="DIR", help="write per-scan prediction .label files")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op and the network")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("check-config", help="parse and validate a config file")
    s.add_argument("config")
    s.set_defaults(func=cmd_check_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except PointPlaneError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [IOError]: {exc}", file=sys.stderr)
        return 7
