"""Point-plane projections: cell indices, scatter-mean onto a grid, gather back.

Five planes are supported. The three Cartesian planes (XY, XZ, YZ) bin the
two retained coordinates on a regular grid spanning the crop bounds. The
polar grid bins the horizontal plane by log-radius rings and azimuth
sectors. The range image bins by azimuth (columns) and elevation (rows).

Every plane flattens its (row, col) cell to ``row * width + col``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import CropBounds, PointCloud
from .errors import ConfigError, DegeneratePointError, ShapeError


class PlaneKind(str, enum.Enum):
    POLAR = "PolarGrid"
    XY = "XY"
    XZ = "XZ"
    YZ = "YZ"
    RANGE = "RangeImage"

    @classmethod
    def parse(cls, text: str) -> "PlaneKind":
        key = text.strip().lower().replace("_", "").replace("-", "")
        for kind in cls:
            if key in (kind.value.lower(), kind.name.lower()):
                return kind
        aliases = {"polar": cls.POLAR, "range": cls.RANGE, "bev": cls.XY, "rangeimage": cls.RANGE}
        if key in aliases:
            return aliases[key]
        raise ConfigError(f"unknown plane kind {text!r}")


DEFAULT_PLANE_ORDER = (PlaneKind.POLAR, PlaneKind.XY, PlaneKind.XZ, PlaneKind.YZ, PlaneKind.RANGE)

_CARTESIAN_AXES = {PlaneKind.XY: (0, 1), PlaneKind.XZ: (0, 2), PlaneKind.YZ: (1, 2)}


@dataclass(frozen=True)
class CartesianGridConfig:
    """Regular grid on one coordinate plane.

    ``col_range`` spans the first axis of the plane name, ``row_range`` the
    second (XZ: columns along x, rows along z).
    """

    plane: PlaneKind
    col_range: tuple[float, float]
    row_range: tuple[float, float]
    cell_size: float

    def __post_init__(self):
        if self.plane not in _CARTESIAN_AXES:
            raise ConfigError(f"{self.plane} is not a Cartesian plane")
        if not self.cell_size > 0:
            raise ConfigError("cell_size must be positive")
        for lo, hi in (self.col_range, self.row_range):
            if not lo < hi:
                raise ConfigError(f"degenerate grid extent ({lo}, {hi})")

    @classmethod
    def from_bounds(cls, plane: PlaneKind, bounds: CropBounds, cell_size: float = 0.4):
        a, b = _CARTESIAN_AXES[PlaneKind(plane)]
        names = "xyz"
        return cls(PlaneKind(plane), bounds.axis(names[a]), bounds.axis(names[b]), cell_size)

    @property
    def width(self) -> int:
        return math.ceil((self.col_range[1] - self.col_range[0]) / self.cell_size)

    @property
    def height(self) -> int:
        return math.ceil((self.row_range[1] - self.row_range[0]) / self.cell_size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class PolarGridConfig:
    rho_min: float = 2.0
    rho_max: float = 50.0
    rings: int = 64
    sectors: int = 512

    def __post_init__(self):
        if not 0 < self.rho_min < self.rho_max:
            raise ConfigError("polar grid needs 0 < rho_min < rho_max")
        if self.rings < 2 or self.sectors < 2:
            raise ConfigError("polar grid needs at least 2 rings and 2 sectors")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rings, self.sectors


@dataclass(frozen=True)
class RangeImageConfig:
    """Spherical image. ``fov_down`` is the magnitude of the downward extent (radians)."""

    height: int = 64
    width: int = 2048
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(25.0)

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ConfigError("range image needs at least 2 rows and 2 columns")
        if self.fov_up < 0 or not self.fov_down > 0:
            raise ConfigError("range image needs fov_up >= 0 and fov_down > 0")

    @classmethod
    def from_degrees(cls, height=64, width=2048, fov_up_deg=3.0, fov_down_deg=25.0):
        return cls(height, width, math.radians(fov_up_deg), math.radians(abs(fov_down_deg)))

    @property
    def fov(self) -> float:
        return self.fov_up + self.fov_down

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class PlaneConfigs:
    """Grid configuration for all five planes."""

    bounds: CropBounds = field(default_factory=CropBounds)
    cell_size: float = 0.4
    polar: PolarGridConfig = field(default_factory=PolarGridConfig)
    range_image: RangeImageConfig = field(default_factory=RangeImageConfig)

    def get(self, kind: PlaneKind):
        kind = PlaneKind(kind)
        if kind is PlaneKind.POLAR:
            return self.polar
        if kind is PlaneKind.RANGE:
            return self.range_image
        return CartesianGridConfig.from_bounds(kind, self.bounds, self.cell_size)

    def shape(self, kind: PlaneKind) -> tuple[int, int]:
        return self.get(kind).shape


@dataclass
class PlaneGrid:
    cells: np.ndarray          # h x w x C
    occupancy: np.ndarray      # h x w
    cell_of_point: np.ndarray  # N, flattened row * w + col

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape


# ---------------------------------------------------------------- binning

def cartesian_cells(coords: np.ndarray, cfg: CartesianGridConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (row, col) for N x 3 coordinates; out-of-range clamps to the edge."""
    a, b = _CARTESIAN_AXES[cfg.plane]
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    col = np.floor((coords[:, a] - cfg.col_range[0]) / cfg.cell_size)
    row = np.floor((coords[:, b] - cfg.row_range[0]) / cfg.cell_size)
    col = np.clip(col, 0, cfg.width - 1).astype(np.int64)
    row = np.clip(row, 0, cfg.height - 1).astype(np.int64)
    return row, col


def polar_cells(coords: np.ndarray, cfg: PolarGridConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (ring, sector). Radii outside [rho_min, rho_max] clamp."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    x, y = coords[:, 0], coords[:, 1]
    rho = np.clip(np.hypot(x, y), cfg.rho_min, cfg.rho_max)
    phi = np.arctan2(y, x)
    lo, hi = math.log(cfg.rho_min), math.log(cfg.rho_max)
    ring = (np.log(rho) - lo) / (hi - lo) * (cfg.rings - 1)
    sector = 0.5 * (phi + np.pi) * cfg.sectors / np.pi - 1.0
    # round half up, then clamp (phi = -pi lands on -1)
    ring = np.clip(np.floor(ring + 0.5), 0, cfg.rings - 1).astype(np.int64)
    sector = np.clip(np.floor(sector + 0.5), 0, cfg.sectors - 1).astype(np.int64)
    return ring, sector


def spherical_cells(coords: np.ndarray, cfg: RangeImageConfig,
                    degenerate: str = "raise") -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (row, col) on the range image.

    Points at the sensor origin have no direction: ``degenerate="raise"``
    rejects them, ``"clamp"`` treats them as zero elevation straight ahead.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    zero = r == 0
    if zero.any():
        if degenerate == "raise":
            raise DegeneratePointError(
                f"point {int(np.flatnonzero(zero)[0])} sits at the sensor origin")
        r = np.where(zero, 1.0, r)
    col = 0.5 * (1.0 - np.arctan2(y, x) / np.pi) * cfg.width
    elevation = np.arcsin(np.clip(z / r, -1.0, 1.0))
    row = (1.0 - (elevation + cfg.fov_down) / cfg.fov) * cfg.height
    col = np.clip(np.floor(col), 0, cfg.width - 1).astype(np.int64)
    row = np.clip(np.floor(row), 0, cfg.height - 1).astype(np.int64)
    return row, col


def cartesian_bin(point, cfg: CartesianGridConfig) -> tuple[int, int]:
    """(row, col) of a single point."""
    row, col = cartesian_cells(np.asarray(point, dtype=np.float64), cfg)
    return int(row[0]), int(col[0])


def polar_bin(point, cfg: PolarGridConfig) -> tuple[int, int]:
    """(ring, sector) of a single point."""
    ring, sector = polar_cells(np.asarray(point, dtype=np.float64), cfg)
    return int(ring[0]), int(sector[0])


def spherical_bin(point, cfg: RangeImageConfig) -> tuple[int, int]:
    """(col, row) of a single point; raises on the origin."""
    row, col = spherical_cells(np.asarray(point, dtype=np.float64), cfg)
    return int(col[0]), int(row[0])


def plane_cells(coords: np.ndarray, kind: PlaneKind, cfg, degenerate: str = "raise"):
    """Flattened cell index per point and the grid shape (h, w)."""
    kind = PlaneKind(kind)
    if kind is PlaneKind.POLAR:
        _check_cfg(cfg, PolarGridConfig, kind)
        row, col = polar_cells(coords, cfg)
    elif kind is PlaneKind.RANGE:
        _check_cfg(cfg, RangeImageConfig, kind)
        row, col = spherical_cells(coords, cfg, degenerate=degenerate)
    else:
        _check_cfg(cfg, CartesianGridConfig, kind)
        if cfg.plane is not kind:
            raise ConfigError(f"grid config is for {cfg.plane.value}, not {kind.value}")
        row, col = cartesian_cells(coords, cfg)
    h, w = cfg.shape
    return row * w + col, (h, w)


def _check_cfg(cfg, expected, kind):
    if not isinstance(cfg, expected):
        raise ConfigError(f"{kind.value} needs a {expected.__name__}, got {type(cfg).__name__}")


# ---------------------------------------------------------- scatter / gather

def scatter_sum(values: np.ndarray, index: np.ndarray, n_cells: int) -> np.ndarray:
    """Per-cell sums; rows are accumulated in ascending point order."""
    out = np.zeros((n_cells,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, index, values)
    return out


def scatter_mean(values: np.ndarray, index: np.ndarray, n_cells: int):
    """Per-cell means (zero where empty) and per-cell counts.

    Accumulates in float64, then casts back to the input precision.
    """
    values = np.asarray(values)
    counts = np.bincount(index, minlength=n_cells)
    sums = scatter_sum(values.astype(np.float64, copy=False), index, n_cells)
    means = sums / np.maximum(counts, 1).reshape((-1,) + (1,) * (values.ndim - 1))
    return means.astype(values.dtype if values.dtype.kind == "f" else np.float64, copy=False), counts


def project(features, cloud: PointCloud, kind: PlaneKind, cfg) -> PlaneGrid:
    """Average point features into the cells of one plane."""
    features = np.asarray(features)
    if features.ndim != 2 or len(features) != len(cloud):
        raise ShapeError(f"features of shape {features.shape} do not match {len(cloud)} points")
    cell, (h, w) = plane_cells(cloud.coords, kind, cfg)
    means, counts = scatter_mean(features, cell, h * w)
    return PlaneGrid(means.reshape(h, w, -1), counts.reshape(h, w), cell)


def unproject(grid: PlaneGrid) -> np.ndarray:
    """Copy each point's cell feature back onto the point."""
    h, w = grid.shape
    return grid.cells.reshape(h * w, -1)[grid.cell_of_point]


def plane_for_layer(layer: int, num_layers: int, order=DEFAULT_PLANE_ORDER) -> PlaneKind:
    """Plane used by backbone layer ``layer`` (1-based); cycles with period 5."""
    if num_layers < 5 or num_layers % 5:
        raise ConfigError(f"number of layers must be a positive multiple of 5, got {num_layers}")
    if not 1 <= layer <= num_layers:
        raise ConfigError(f"layer {layer} outside 1..{num_layers}")
    order = tuple(PlaneKind(k) for k in order)
    if len(order) != 5 or len(set(order)) != 5:
        raise ConfigError("plane order must list each of the five planes once")
    return order[(layer - 1) % 5]
