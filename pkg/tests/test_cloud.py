import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pointplane.cloud import (CropBounds, PointCloud, build_features, crop, knn, preprocess,
                              propagate_labels, voxel_downsample)
from pointplane.errors import ConfigError, EmptyInputError


def cloud_of(coords, remission=None, labels=None):
    coords = np.asarray(coords, dtype=float).reshape(-1, 3)
    rem = np.zeros(len(coords)) if remission is None else np.asarray(remission, dtype=float)
    return PointCloud(coords, rem, None if labels is None else np.asarray(labels))


def brute_knn(coords, k):
    n = len(coords)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    out = np.zeros((n, k), dtype=np.int64)
    for i in range(n):
        order = sorted(range(n), key=lambda j: (j != i, d2[i, j], j))[:k]
        order += [order[-1]] * (k - len(order))
        out[i] = order
    return out


coords_st = st.integers(1, 60).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-20, 20, allow_nan=False)))


# ---------------------------------------------------------------- features

@pytest.mark.parametrize("point, rem, row", [
    ((3, 4, 0), 0.5, (3, 4, 0, 0.5, 5)),
    ((0, 0, 0), 0.0, (0, 0, 0, 0, 0)),
    ((1, 2, 2), 0.1, (1, 2, 2, 0.1, 3)),
])
def test_build_features_rows(point, rem, row):
    f = build_features(cloud_of([point], [rem]))
    assert f.shape == (1, 5)
    np.testing.assert_allclose(f[0], row, rtol=0, atol=1e-15)


def test_build_features_empty():
    with pytest.raises(EmptyInputError):
        build_features(cloud_of(np.zeros((0, 3))))


def test_cloud_rejects_non_finite_and_bad_lengths():
    with pytest.raises(ValueError):
        cloud_of([[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.zeros(2), instance_ids=np.zeros(3, int))


def test_validate_labels():
    c = cloud_of(np.zeros((3, 3)), labels=[0, 2, 5])
    c.validate_labels(6)
    with pytest.raises(ValueError):
        c.validate_labels(5, ignore_index=0)


# ------------------------------------------------------------------- voxel

def test_voxel_examples():
    c, m = voxel_downsample(cloud_of([(0.01, 0.02, 0.03), (0.04, 0.05, 0.06)]), 0.1)
    assert len(c) == 1 and list(m) == [0, 0]
    c, m = voxel_downsample(cloud_of([(0, 0, 0), (0.15, 0, 0)]), 0.1)
    assert len(c) == 2 and list(m) == [0, 1]
    c, m = voxel_downsample(cloud_of(np.zeros((0, 3))), 0.1)
    assert len(c) == 0 and len(m) == 0


def test_voxel_keeps_first_point_and_labels():
    c = cloud_of([(0.05, 0, 0), (1, 1, 1), (0.01, 0.01, 0.01)], labels=[3, 4, 5])
    out, index_map = voxel_downsample(c, 0.1)
    np.testing.assert_array_equal(out.coords, c.coords[:2])
    np.testing.assert_array_equal(out.labels, [3, 4])
    np.testing.assert_array_equal(index_map, [0, 1, 0])


def test_voxel_negative_coordinates_use_floor():
    out, _ = voxel_downsample(cloud_of([(-0.05, 0, 0), (0.05, 0, 0)]), 0.1)
    assert len(out) == 2


def test_voxel_bad_resolution():
    with pytest.raises(ConfigError):
        voxel_downsample(cloud_of([(0, 0, 0)]), 0.0)


@given(coords_st, st.sampled_from([0.05, 0.3, 1.0]))
def test_voxel_idempotent_and_map_consistent(coords, res):
    c = cloud_of(coords)
    once, index_map = voxel_downsample(c, res)
    twice, _ = voxel_downsample(once, res)
    np.testing.assert_array_equal(once.coords, twice.coords)
    # every original point maps to the representative of its own voxel
    keys = np.floor(c.coords / res)
    np.testing.assert_array_equal(keys, np.floor(once.coords[index_map] / res))


# -------------------------------------------------------------------- crop

def test_crop_examples():
    b = CropBounds()
    c, mask = crop(cloud_of([(60, 0, 0), (10, 10, 0)]), b)
    assert list(mask) == [False, True] and len(c) == 1
    inside = cloud_of([(0, 0, 0), (50, -50, 2), (-50, 50, -3)])
    c, mask = crop(inside, b)
    assert mask.all() and len(c) == 3


def test_crop_bounds_validation():
    with pytest.raises(ConfigError):
        CropBounds(x_min=1, x_max=1)


@given(coords_st)
def test_crop_idempotent(coords):
    b = CropBounds(-10, 10, -5, 5, -3, 2)
    once, mask = crop(cloud_of(coords), b)
    twice, mask2 = crop(once, b)
    assert mask.sum() == len(once) and mask2.all()
    np.testing.assert_array_equal(once.coords, twice.coords)


# --------------------------------------------------------------------- knn

def test_knn_examples():
    assert knn(cloud_of([(1, 2, 3)]), 4).tolist() == [[0, 0, 0, 0]]
    line = cloud_of([(0, 0, 0), (1, 0, 0), (3, 0, 0)])
    assert knn(line, 2)[1].tolist() == [1, 0]
    assert knn(line, 1).tolist() == [[0], [1], [2]]


def test_knn_errors():
    with pytest.raises(EmptyInputError):
        knn(cloud_of(np.zeros((0, 3))), 2)
    with pytest.raises(ConfigError):
        knn(cloud_of([(0, 0, 0)]), 0)


def test_knn_ties_by_index_on_lattice():
    g = np.stack(np.meshgrid(np.arange(5), np.arange(5), [0.0], indexing="ij"), -1).reshape(-1, 3)
    c = cloud_of(g)
    np.testing.assert_array_equal(knn(c, 9), brute_knn(c.coords, 9))


def test_knn_duplicates_self_first():
    c = cloud_of([(0, 0, 0)] * 4 + [(1, 0, 0)])
    table = knn(c, 3)
    assert table[:, 0].tolist() == list(range(5))
    assert table[2].tolist() == [2, 0, 1]


@given(st.integers(1, 200), st.integers(1, 20), st.integers(0, 2 ** 31 - 1))
def test_knn_matches_brute_force(n, k, seed):
    r = np.random.default_rng(seed)
    pts = r.uniform(-5, 5, (n, 3))
    if n > 3:  # exercise exact ties with duplicated and lattice-snapped points
        pts[: n // 4] = np.round(pts[: n // 4])
        pts[-1] = pts[0]
    c = cloud_of(pts)
    table = knn(c, k)
    np.testing.assert_array_equal(table, brute_knn(c.coords, k))
    d = np.linalg.norm(c.coords[table] - c.coords[:, None, :], axis=-1)
    assert (d[:, 0] == 0).all() and (np.diff(d, axis=1) >= 0).all()


# --------------------------------------------------------------- propagate

def test_propagate_examples():
    c = cloud_of([(0, 0, 0), (1, 1, 1)])
    np.testing.assert_array_equal(propagate_labels(c, c, np.array([4, 7])), [4, 7])
    proc = cloud_of([(1, 0, 0), (50, 0, 0)])
    assert propagate_labels(cloud_of([(100, 0, 0)]), proc, np.array([1, 2])).tolist() == [2]
    full = cloud_of([(1, 0, 0), (1, 0, 0), (50, 0, 0)])
    assert propagate_labels(full, proc, np.array([1, 2])).tolist() == [1, 1, 2]


def test_propagate_errors():
    with pytest.raises(EmptyInputError):
        propagate_labels(cloud_of([(0, 0, 0)]), cloud_of(np.zeros((0, 3))), np.zeros(0, int))
    with pytest.raises(ValueError):
        propagate_labels(cloud_of([(0, 0, 0)]), cloud_of([(0, 0, 0)]), np.zeros(2, int))


@given(coords_st)
def test_preprocess_then_propagate_restricts_to_identity(coords):
    full = cloud_of(coords)
    processed, kept = preprocess(full, 0.5, CropBounds(-15, 15, -15, 15, -10, 10))
    if len(processed) == 0:
        return
    preds = np.arange(len(processed))
    out = propagate_labels(full, processed, preds, kept)
    assert len(out) == len(full)
    np.testing.assert_array_equal(out[kept], preds)
    # without the pin, nearest lookup alone agrees whenever distances are resolvable
    snapped = cloud_of(np.round(coords, 2))
    processed, kept = preprocess(snapped, 0.5, CropBounds(-15, 15, -15, 15, -10, 10))
    if len(processed):
        preds = np.arange(len(processed))
        np.testing.assert_array_equal(propagate_labels(snapped, processed, preds)[kept], preds)
