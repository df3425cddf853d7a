import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import cell_of, grouped_means
from pointplane.cloud import CropBounds, PointCloud
from pointplane.errors import ConfigError, DegeneratePointError, ShapeError
from pointplane.projection import (CartesianGridConfig, PlaneConfigs, PlaneKind, PolarGridConfig,
                                   RangeImageConfig, cartesian_bin, plane_cells, plane_for_layer,
                                   polar_bin, project, scatter_mean, spherical_bin, unproject)

PLANES = PlaneConfigs()
SMALL = PlaneConfigs(CropBounds(-10, 10, -10, 10, -3, 2), 0.7, PolarGridConfig(1.0, 12.0, 9, 16),
                     RangeImageConfig.from_degrees(8, 24, 10.0, 20.0))


def cloud_of(coords):
    coords = np.asarray(coords, dtype=float).reshape(-1, 3)
    return PointCloud(coords, np.zeros(len(coords)))


def random_cloud(r, n, spread=12.0):
    c = np.column_stack([r.uniform(-spread, spread, n), r.uniform(-spread, spread, n), r.uniform(-3, 2, n)])
    c[np.linalg.norm(c, axis=1) == 0] = (1, 0, 0)
    return c


# ----------------------------------------------------------------- binning

def test_cartesian_bin_examples():
    cfg = CartesianGridConfig.from_bounds(PlaneKind.XY, CropBounds(), 0.4)
    assert cfg.shape == (250, 250)
    assert cartesian_bin((0, -50, 0), cfg) == (0, 125)
    assert cartesian_bin((-50, 0, 0), cfg)[1] == 0
    assert cartesian_bin((50, 0, 0), cfg)[1] == cfg.width - 1


def test_cartesian_axes_and_extent():
    xz = CartesianGridConfig.from_bounds(PlaneKind.XZ, CropBounds(), 0.4)
    assert xz.shape == (math.ceil(5 / 0.4), 250)
    assert cartesian_bin((0, 99, -3), xz) == (0, 125)
    yz = CartesianGridConfig.from_bounds(PlaneKind.YZ, CropBounds(), 0.4)
    assert cartesian_bin((99, -50, 2), yz) == (yz.height - 1, 0)


def test_cartesian_config_validation():
    with pytest.raises(ConfigError):
        CartesianGridConfig(PlaneKind.XY, (0, 1), (0, 1), 0.0)
    with pytest.raises(ConfigError):
        CartesianGridConfig(PlaneKind.POLAR, (0, 1), (0, 1), 0.1)


def test_polar_bin_examples():
    cfg = PolarGridConfig()
    assert polar_bin((cfg.rho_min, 0, 0), cfg)[0] == 0
    assert polar_bin((0, cfg.rho_max, 0), cfg)[0] == cfg.rings - 1
    assert polar_bin((10, 0, 0), cfg)[1] == 255
    assert polar_bin((0, 0, 0), cfg)[0] == 0               # rho = 0 clamps to ring 0
    assert polar_bin((-10, -1e-300, 0), cfg)[1] == 0       # phi = -pi lands on -1 then clamps


def test_polar_config_validation():
    with pytest.raises(ConfigError):
        PolarGridConfig(rho_min=0)
    with pytest.raises(ConfigError):
        PolarGridConfig(rings=1)


def test_spherical_bin_examples():
    cfg = RangeImageConfig()
    assert spherical_bin((10, 0, 0), cfg) == (1024, 6)
    top = (math.cos(cfg.fov_up), 0, math.sin(cfg.fov_up))
    assert spherical_bin(top, cfg)[1] == 0
    assert spherical_bin((0, 0, 5), cfg)[1] == 0            # above the field of view clamps
    assert spherical_bin((1, 0, -5), cfg)[1] == cfg.height - 1
    with pytest.raises(DegeneratePointError):
        spherical_bin((0, 0, 0), cfg)


def test_range_config_validation():
    with pytest.raises(ConfigError):
        RangeImageConfig(height=1)
    with pytest.raises(ConfigError):
        RangeImageConfig(fov_down=0.0)


@given(st.floats(0, 80), st.floats(0, 80))
def test_polar_ring_monotone_in_rho(a, b):
    cfg = PolarGridConfig()
    lo, hi = sorted((a, b))
    assert polar_bin((lo, 0, 0), cfg)[0] <= polar_bin((hi, 0, 0), cfg)[0]


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_spherical_row_monotone_in_elevation(a, b):
    cfg = RangeImageConfig()
    lo, hi = sorted((a, b))
    row = lambda e: spherical_bin((math.cos(e), 0.0, math.sin(e)), cfg)[1]
    assert row(lo) >= row(hi)


@pytest.mark.parametrize("kind", list(PlaneKind))
def test_vectorised_cells_match_scalar_formulas(kind):
    r = np.random.default_rng(5)
    coords = random_cloud(r, 300, 60)
    for planes in (PLANES, SMALL):
        cfg = planes.get(kind)
        cell, (h, w) = plane_cells(coords, kind, cfg)
        expect = [rc[0] * w + rc[1] for rc in (cell_of(p, kind, cfg) for p in coords)]
        np.testing.assert_array_equal(cell, expect)
        assert cell.min() >= 0 and cell.max() < h * w


def test_plane_cells_wrong_config():
    with pytest.raises(ConfigError):
        plane_cells(np.zeros((1, 3)) + 1, PlaneKind.POLAR, RangeImageConfig())
    with pytest.raises(ConfigError):
        plane_cells(np.ones((1, 3)), PlaneKind.XZ, PLANES.get(PlaneKind.XY))


def test_degenerate_clamp_mode():
    cell, _ = plane_cells(np.zeros((1, 3)), PlaneKind.RANGE, RangeImageConfig(), degenerate="clamp")
    assert cell[0] == 6 * 2048 + 1024


def test_plane_kind_parse():
    assert PlaneKind.parse("polar") is PlaneKind.POLAR
    assert PlaneKind.parse("RangeImage") is PlaneKind.RANGE
    assert PlaneKind.parse("xz") is PlaneKind.XZ
    with pytest.raises(ConfigError):
        PlaneKind.parse("cylinder")


# -------------------------------------------------------- project/unproject

def test_project_examples():
    cfg = SMALL.get(PlaneKind.XY)
    c = cloud_of([(0.1, 0.1, 0), (0.2, 0.2, 0)])
    g = project(np.array([[1.0], [3.0]]), c, PlaneKind.XY, cfg)
    assert g.cells.reshape(-1)[g.cell_of_point[0]] == 2.0
    assert g.occupancy.sum() == 2 and (g.cells[g.occupancy == 0] == 0).all()
    single = project(np.array([[4.0, 5.0]]), cloud_of([(3, 3, 0)]), PlaneKind.XY, cfg)
    np.testing.assert_array_equal(unproject(single), [[4.0, 5.0]])
    out = unproject(g)
    np.testing.assert_array_equal(out[0], out[1])


def test_unproject_zero_grid():
    g = project(np.zeros((5, 3)), cloud_of(random_cloud(np.random.default_rng(0), 5)), PlaneKind.POLAR,
                SMALL.get(PlaneKind.POLAR))
    assert (unproject(g) == 0).all()


def test_project_shape_mismatch():
    with pytest.raises(ShapeError):
        project(np.zeros((3, 2)), cloud_of(np.ones((2, 3))), PlaneKind.XY, SMALL.get(PlaneKind.XY))


@pytest.mark.parametrize("kind", list(PlaneKind))
def test_project_matches_grouping_oracle(kind):
    r = np.random.default_rng(11)
    for planes in (PLANES, SMALL):
        cfg = planes.get(kind)
        coords = random_cloud(r, 400)
        feats = r.standard_normal((400, 3))
        g = project(feats, cloud_of(coords), kind, cfg)
        oracle = grouped_means(coords, feats, kind, cfg)
        assert int(g.occupancy.sum()) == 400 and (g.occupancy > 0).sum() == len(oracle)
        for (row, col), (mean, count) in oracle.items():
            assert g.occupancy[row, col] == count
            np.testing.assert_allclose(g.cells[row, col], mean, rtol=1e-9, atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(list(PlaneKind)))
def test_project_permutation_invariant_and_mass_conserving(seed, kind):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 200))
    coords, feats = random_cloud(r, n), r.standard_normal((n, 4))
    cfg = SMALL.get(kind)
    g = project(feats, cloud_of(coords), kind, cfg)
    perm = r.permutation(n)
    gp = project(feats[perm], cloud_of(coords[perm]), kind, cfg)
    np.testing.assert_allclose(gp.cells, g.cells, rtol=1e-9, atol=1e-12)
    mass = (g.cells * g.occupancy[..., None]).sum(axis=(0, 1))
    np.testing.assert_allclose(mass, feats.sum(axis=0), rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(list(PlaneKind)))
def test_round_trip_exact_when_cells_are_singletons(seed, kind):
    r = np.random.default_rng(seed)
    coords = random_cloud(r, 60)
    cfg = SMALL.get(kind)
    cell, _ = plane_cells(coords, kind, cfg)
    _, first = np.unique(cell, return_index=True)
    coords = coords[np.sort(first)]
    feats = r.standard_normal((len(coords), 3))
    assert np.array_equal(unproject(project(feats, cloud_of(coords), kind, cfg)), feats)


def test_scatter_mean_counts():
    means, counts = scatter_mean(np.array([[1.0], [2.0], [6.0]]), np.array([2, 0, 2]), 4)
    np.testing.assert_array_equal(counts, [1, 0, 2, 0])
    np.testing.assert_array_equal(means[:, 0], [2.0, 0.0, 3.5, 0.0])


# ---------------------------------------------------------- plane schedule

def test_plane_for_layer_examples():
    assert plane_for_layer(1, 10) is PlaneKind.POLAR
    assert plane_for_layer(6, 10) is PlaneKind.POLAR
    assert plane_for_layer(5, 10) is PlaneKind.RANGE
    assert plane_for_layer(7, 10) is PlaneKind.XY
    for layer in range(6, 51):
        assert plane_for_layer(layer, 50) is plane_for_layer(layer - 5, 50)


def test_plane_for_layer_errors():
    with pytest.raises(ConfigError):
        plane_for_layer(1, 12)
    with pytest.raises(ConfigError):
        plane_for_layer(11, 10)
    with pytest.raises(ConfigError):
        plane_for_layer(1, 10, order=(PlaneKind.XY,) * 5)
