"""Run configuration: an INI file with a fixed schema.

Unknown sections or keys are rejected. Every key has a default, so an
empty file is a valid (synthetic-data) configuration. See
``docs/config.md`` for the full schema.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .augment import CutMixConfig, GlobalAugmentConfig
from .cloud import CropBounds
from .dataio import ClassMap
from .errors import ConfigError
from .losses import LossConfig
from .network import NetworkConfig
from .optim import OptimizerConfig
from .projection import PlaneConfigs, PlaneKind, PolarGridConfig, RangeImageConfig


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text):
        return tuple(conv(t.strip()) for t in text.split(",") if t.strip())
    return parse


def _str(text):
    return text.strip()


SCHEMA = {
    "data": {
        "kind": (_str, "synthetic"),
        "root": (_str, ""),
        "train_sequences": (_list(str), ("00",)),
        "val_sequences": (_list(str), ()),
        "class_map": (_str, "semantickitti"),
        "num_classes": (int, 20),
        "ignore_index": (int, 0),
        "synthetic_train_scenes": (int, 4),
        "synthetic_val_scenes": (int, 2),
        "synthetic_points": (int, 400),
        "voxel_size": (float, 0.1),
        "crop": (_list(float), (-50.0, 50.0, -50.0, 50.0, -3.0, 2.0)),
    },
    "network": {
        "layers": (int, 50),
        "channels": (int, 256),
        "k_neighbors": (int, 16),
        "mlp_hidden": (int, 256),
        "conv_hidden": (int, 256),
        "channel_hidden": (int, 0),
        "plane_order": (_list(str), tuple(k.value for k in PlaneKind)),
        "dtype": (_str, "float32"),
    },
    "grids": {
        "cell_size": (float, 0.4),
        "polar_rho_min": (float, 2.0),
        "polar_rho_max": (float, 50.0),
        "polar_rings": (int, 64),
        "polar_sectors": (int, 512),
        "range_height": (int, 64),
        "range_width": (int, 2048),
        "range_fov_up_deg": (float, 3.0),
        "range_fov_down_deg": (float, 25.0),
    },
    "loss": {
        "lovasz_weight": (float, 1.0),
    },
    "augment": {
        "global": (_bool, True),
        "rotate_prob": (float, 1.0),
        "flip_prob": (float, 0.5),
        "scale_prob": (float, 1.0),
        "scale_min": (float, 0.95),
        "scale_max": (float, 1.05),
        "cutmix": (_bool, False),
        "bank_dir": (_str, ""),
        "rare_classes": (_list(int), (5, 6)),
        "ground_classes": (_list(int), (9, 10, 11, 17)),
        "max_paste": (int, 10),
        "vertical_fov_step": (float, 0.0073),
        "rate_min": (float, 0.5),
        "rate_max": (float, 2.0),
        "min_instance_points": (int, 10),
    },
    "optim": {
        "peak_lr": (float, 0.002),
        "warmup_epochs": (int, 4),
        "total_epochs": (int, 45),
        "final_lr": (float, 1e-5),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "weight_decay": (float, 0.01),
        "batch_size": (int, 4),
        "batch_mode": (_str, "concat"),
    },
    "run": {
        "seed": (int, 0),
        "output_dir": (_str, "runs/default"),
    },
}


@dataclass
class DataConfig:
    kind: str = "synthetic"
    root: str = ""
    train_sequences: tuple = ("00",)
    val_sequences: tuple = ()
    class_map: ClassMap = field(default_factory=ClassMap.semantic_kitti)
    synthetic_train_scenes: int = 4
    synthetic_val_scenes: int = 2
    synthetic_points: int = 400
    voxel_size: float = 0.1
    crop: CropBounds = field(default_factory=CropBounds)

    @property
    def ignore_index(self) -> int:
        return self.class_map.ignore_index


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    global_augment: GlobalAugmentConfig | None = field(default_factory=GlobalAugmentConfig)
    cutmix: CutMixConfig | None = None
    bank_dir: str = ""
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_mode: str = "concat"
    dtype: str = "float32"
    seed: int = 0
    output_dir: str = "runs/default"
    source: str = ""


def _read_map_file(path: Path) -> dict:
    """``raw: train`` lines; inside a dataset YAML only the ``learning_map`` block is read."""
    lines = path.read_text().splitlines()
    start = next((i for i, ln in enumerate(lines) if ln.strip() == "learning_map:"), None)
    if start is not None:
        block = []
        for ln in lines[start + 1:]:
            if ln.strip() and not ln[0].isspace():
                break
            block.append(ln)
        lines = block
    pairs = {}
    for ln in lines:
        m = re.match(r"^\s*(\d+)\s*:\s*(\d+)\s*(#.*)?$", ln)
        if m:
            pairs[int(m.group(1))] = int(m.group(2))
    return pairs


def _parse_class_map(text: str, num_classes: int, ignore_index: int,
                     base_dir: Path | None = None) -> ClassMap:
    key = text.strip().lower()
    if key == "semantickitti":
        cm = ClassMap.semantic_kitti()
        if ignore_index != cm.ignore_index:
            cm = ClassMap(cm.learning_map, cm.inverse, ignore_index, cm.names)
        return cm
    if key == "identity":
        return ClassMap.identity(num_classes, ignore_index)
    if base_dir is not None and (base_dir / text.strip()).is_file():
        pairs = _read_map_file(base_dir / text.strip())
    elif Path(text.strip()).is_file():
        pairs = _read_map_file(Path(text.strip()))
    else:
        pairs = {}
        for item in text.split(","):
            if not item.strip():
                continue
            raw, _, train = item.partition(":")
            pairs[int(raw)] = int(train)
    if not pairs:
        raise ConfigError("class_map is empty")
    inverse = {}
    for raw, train in sorted(pairs.items()):
        inverse.setdefault(train, raw)
    return ClassMap(pairs, inverse, ignore_index)


def read_sections(text: str) -> dict:
    """Parse and type-check the INI text; returns section -> key -> value."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            conv, _ = SCHEMA[section][key]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return values


def build_config(values: dict, base_dir: Path | None = None, check_paths: bool = True) -> RunConfig:
    d, n, g, a, o, r = (values[s] for s in ("data", "network", "grids", "augment", "optim", "run"))
    try:
        if d["kind"] not in ("synthetic", "semantickitti"):
            raise ConfigError(f"[data] kind must be 'synthetic' or 'semantickitti', got {d['kind']!r}")
        if len(d["crop"]) != 6:
            raise ConfigError("[data] crop needs six numbers: x_min, x_max, y_min, y_max, z_min, z_max")
        crop = CropBounds(*d["crop"])
        class_map = _parse_class_map(d["class_map"], d["num_classes"], d["ignore_index"], base_dir)
        root = d["root"]
        if d["kind"] == "semantickitti":
            if not root:
                raise ConfigError("[data] root is required for semantickitti data")
            if base_dir is not None and not Path(root).is_absolute():
                root = str(base_dir / root)
            if check_paths and not Path(root).exists():
                raise ConfigError(f"[data] root {root} does not exist")
        data = DataConfig(d["kind"], root, d["train_sequences"], d["val_sequences"], class_map,
                          d["synthetic_train_scenes"], d["synthetic_val_scenes"],
                          d["synthetic_points"], d["voxel_size"], crop)
        if not data.voxel_size > 0:
            raise ConfigError("[data] voxel_size must be positive")

        planes = PlaneConfigs(
            crop, g["cell_size"],
            PolarGridConfig(g["polar_rho_min"], g["polar_rho_max"], g["polar_rings"], g["polar_sectors"]),
            RangeImageConfig(g["range_height"], g["range_width"],
                             math.radians(g["range_fov_up_deg"]), math.radians(abs(g["range_fov_down_deg"]))),
        )
        for kind in PlaneKind:
            planes.get(kind)
        if n["dtype"] not in ("float32", "float64"):
            raise ConfigError("[network] dtype must be float32 or float64")
        network = NetworkConfig(
            n["layers"], n["channels"], n["k_neighbors"], class_map.num_classes,
            n["mlp_hidden"], n["conv_hidden"], n["channel_hidden"] or None, planes,
            tuple(PlaneKind.parse(p) for p in n["plane_order"]),
        )
        loss = LossConfig(values["loss"]["lovasz_weight"], class_map.ignore_index)
        glob = GlobalAugmentConfig(a["rotate_prob"], a["flip_prob"], a["scale_prob"],
                                   (a["scale_min"], a["scale_max"])) if a["global"] else None
        cutmix = CutMixConfig(frozenset(a["rare_classes"]), frozenset(a["ground_classes"]),
                              a["max_paste"], a["vertical_fov_step"], (a["rate_min"], a["rate_max"]),
                              a["min_instance_points"], rng_seed=r["seed"]) if a["cutmix"] else None
        optim = OptimizerConfig(o["peak_lr"], o["warmup_epochs"], o["total_epochs"], o["final_lr"],
                                (o["beta1"], o["beta2"]), o["eps"], o["weight_decay"], o["batch_size"])
        if o["batch_mode"] not in ("concat", "accumulate"):
            raise ConfigError("[optim] batch_mode must be 'concat' or 'accumulate'")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out_dir = r["output_dir"]
    if base_dir is not None and not Path(out_dir).is_absolute():
        out_dir = str(base_dir / out_dir)
    bank = a["bank_dir"]
    if bank and base_dir is not None and not Path(bank).is_absolute():
        bank = str(base_dir / bank)
    return RunConfig(data, network, loss, glob, cutmix, bank, optim, o["batch_mode"],
                     n["dtype"], r["seed"], out_dir)


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cfg = build_config(read_sections(path.read_text()), path.parent, check_paths)
    cfg.source = str(path)
    return cfg


def parse_config(text: str, check_paths: bool = True) -> RunConfig:
    return build_config(read_sections(text), None, check_paths)
