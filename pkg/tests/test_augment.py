import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pointplane.augment import (CutMixConfig, GlobalAugmentConfig, InstanceRecord, NoGroundWarning,
                                beam_quantize, extract_instances, global_augment, load_bank,
                                paste_instances, resample_instance, resample_rate, save_bank)
from pointplane.cloud import PointCloud
from pointplane.errors import ConfigError, EmptyInputError, FormatError

CFG = CutMixConfig(rare_classes={6, 7}, ground_classes={9})


def instance(seed=0, m=60, dist=12.0, height=1.7, cls=6):
    r = np.random.default_rng(seed)
    pts = np.column_stack([r.normal(0, 0.3, m), r.normal(0, 0.3, m), r.uniform(0, height, m)])
    return InstanceRecord(pts, r.uniform(0, 1, m), cls, dist, "test")


def scene(seed=0, ground=80, labelled_objects=()):
    r = np.random.default_rng(seed)
    a, rad = r.uniform(0, 2 * np.pi, ground), r.uniform(3, 20, ground)
    coords = [np.column_stack([rad * np.cos(a), rad * np.sin(a), np.full(ground, -1.7)])]
    labels, inst = [np.full(ground, 9)], [np.zeros(ground, int)]
    for k, (cls, m, center) in enumerate(labelled_objects, start=1):
        coords.append(np.column_stack([center[0] + r.normal(0, 0.2, m), center[1] + r.normal(0, 0.2, m),
                                       -1.7 + r.uniform(0, 1.8, m)]))
        labels.append(np.full(m, cls))
        inst.append(np.full(m, k))
    coords = np.concatenate(coords)
    return PointCloud(coords, r.uniform(0, 1, len(coords)), np.concatenate(labels), np.concatenate(inst))


# ----------------------------------------------------------------- global

def test_global_augment_examples():
    c = PointCloud(np.array([[1.0, 0.0, 0.0], [1.0, 2.0, 3.0]]), np.zeros(2), np.array([1, 2]))
    r = np.random.default_rng(0)
    out = global_augment(c, r, theta=2 * math.pi, flip=(False, False), scale=1.0)
    np.testing.assert_allclose(out.coords, c.coords, atol=1e-9)
    out = global_augment(c, r, theta=math.pi / 2, flip=(False, False), scale=1.0)
    np.testing.assert_allclose(out.coords[0], [0, 1, 0], atol=1e-12)
    out = global_augment(c, r, theta=0.0, flip=(True, False), scale=1.0)
    np.testing.assert_array_equal(out.coords[1], [-1, 2, 3])
    np.testing.assert_array_equal(out.labels, c.labels)


@given(st.integers(0, 2 ** 31 - 1))
def test_global_augment_preserves_ranges_up_to_scale(seed):
    r = np.random.default_rng(seed)
    c = scene(seed % 100, 30)
    out = global_augment(c, r, GlobalAugmentConfig())
    ratio = np.linalg.norm(out.coords, axis=1) / np.linalg.norm(c.coords, axis=1)
    assert np.ptp(ratio) < 1e-9 and 0.95 - 1e-12 <= ratio[0] <= 1.05 + 1e-12
    np.testing.assert_array_equal(out.labels, c.labels)


# -------------------------------------------------------------- instances

def test_extract_instances_examples():
    s = scene(0, 40, [(6, 50, (8, 0))])
    recs = extract_instances(s, CFG)
    assert len(recs) == 1 and recs[0].class_id == 6 and len(recs[0]) == 50
    assert extract_instances(scene(0, 40, [(6, 5, (8, 0))]), CFG) == []
    two = extract_instances(scene(0, 40, [(6, 20, (8, 0)), (6, 20, (-8, 3))]), CFG)
    assert len(two) == 2


def test_extract_instances_recentres_and_records_distance():
    s = scene(1, 40, [(7, 30, (10, 5))])
    (rec,) = extract_instances(s, CFG)
    np.testing.assert_allclose(rec.points[:, :2].mean(axis=0), 0, atol=1e-12)
    assert rec.points[:, 2].min() == 0
    obj = s.coords[s.instance_ids == 1]
    assert rec.source_distance == pytest.approx(np.linalg.norm(obj.mean(axis=0)))


def test_extract_instances_needs_instance_ids():
    s = scene(0, 10)
    with pytest.raises(FormatError):
        extract_instances(PointCloud(s.coords, s.remission, s.labels), CFG)


# ------------------------------------------------------------------ beams

def test_beam_quantize_example():
    inst = InstanceRecord(np.array([[0, 0, 0.0], [0, 0, 0.05], [0, 0, 0.30], [0, 0, 0.35]]), np.zeros(4), 6, 10)
    d = 0.1 / math.tan(CFG.vertical_fov_step)
    beams = beam_quantize(inst, d, CFG)
    assert beams.bin_height == pytest.approx(0.1)
    assert beams.bins.tolist() == [0, 3] and [len(g) for g in beams.groups] == [2, 2]
    thin = InstanceRecord(np.array([[0, 0, 0.01], [1, 0, 0.02]]), np.zeros(2), 6, 10)
    assert len(beam_quantize(thin, 100.0, CFG)) == 1
    with pytest.raises(ConfigError):
        beam_quantize(thin, 0.0, CFG)


@given(st.integers(0, 2 ** 31 - 1), st.floats(1.0, 80.0))
def test_beam_groups_partition(seed, d):
    inst = instance(seed % 1000)
    beams = beam_quantize(inst, d, CFG)
    allidx = np.concatenate(beams.groups)
    assert len(allidx) == len(inst) and np.array_equal(np.sort(allidx), np.arange(len(inst)))
    for g in beams.groups:
        assert np.ptp(inst.points[g, 2]) <= beams.bin_height


# --------------------------------------------------------------- resample

def test_resample_rate_one_is_identity():
    inst = instance(0)
    out = resample_instance(inst, inst.source_distance, CFG, np.random.default_rng(0))
    np.testing.assert_array_equal(out.points, inst.points)
    np.testing.assert_array_equal(out.remission, inst.remission)


def test_resample_forced_rate_two_doubles():
    inst = instance(1)
    out = resample_instance(inst, 3.0, CFG, np.random.default_rng(0), rate=2.0)
    assert len(out) == 2 * len(inst)
    beams = beam_quantize(inst, 3.0, CFG)
    extra = out.points[len(inst):]
    orig_sorted = np.sort(inst.points, axis=0)
    np.testing.assert_allclose(np.sort(extra - [0, 0, beams.bin_height / 2], axis=0), orig_sorted, atol=1e-12)


def test_resample_forced_half_with_four_equal_groups():
    z = np.repeat([0.05, 0.15, 0.25, 0.35], 5)
    inst = InstanceRecord(np.column_stack([np.arange(20) * 0.01, np.zeros(20), z]), np.zeros(20), 6, 10.0)
    d = 0.1 / math.tan(CFG.vertical_fov_step)
    assert len(beam_quantize(inst, d, CFG)) == 4
    out = resample_instance(inst, d, CFG, np.random.default_rng(2), rate=0.5)
    assert 0 < len(out) < 20 and len(out) == 10
    kept_bins = np.unique(np.floor(out.points[:, 2] / 0.1 + 1e-9))
    assert len(kept_bins) == 2            # two whole groups removed


def test_resample_never_empties_and_clamps():
    inst = InstanceRecord(np.array([[0, 0, 0.0], [0, 0, 1.0]]), np.zeros(2), 6, 1.0)
    out = resample_instance(inst, 1000.0, CFG, np.random.default_rng(0))
    assert len(out) >= 1
    assert resample_rate(inst, 1000.0, CFG) == 0.5
    assert resample_rate(inst, 1e-3, CFG) == 2.0
    with pytest.raises(EmptyInputError):
        resample_instance(InstanceRecord(np.zeros((0, 3)), np.zeros(0), 6, 1.0), 2.0, CFG,
                          np.random.default_rng(0))


def test_resample_monotone_in_distance():
    for seed in range(10):
        inst = instance(seed, m=int(40 + 10 * seed), dist=float(8 + seed))
        counts = [len(resample_instance(inst, d, CFG, np.random.default_rng(seed)))
                  for d in (3.0, 6.0, 10.0, 16.0, 30.0)]
        assert counts == sorted(counts, reverse=True)


def test_upsampled_points_are_shifted_copies():
    inst = instance(3, dist=20.0)
    out = resample_instance(inst, 13.0, CFG, np.random.default_rng(1))
    shift = beam_quantize(inst, 13.0, CFG).bin_height / 2
    originals = {tuple(p) for p in np.round(inst.points, 12)}
    for p in out.points[len(inst):]:
        assert tuple(np.round(p - [0, 0, shift], 12)) in originals


def test_cutmix_config_validation():
    with pytest.raises(ConfigError):
        CutMixConfig(rate_clamp=(1.5, 2.0))
    with pytest.raises(ConfigError):
        CutMixConfig(vertical_fov_step=0)


# ------------------------------------------------------------------ paste

def test_paste_max_zero_and_no_ground():
    s = scene(0, 30)
    out = paste_instances(s, [instance()], CutMixConfig({6}, {9}, max_paste=0), np.random.default_rng(0))
    np.testing.assert_array_equal(out.coords, s.coords)
    no_ground = PointCloud(s.coords, s.remission, np.full(len(s), 3), s.instance_ids)
    with pytest.warns(NoGroundWarning):
        out = paste_instances(no_ground, [instance()], CFG, np.random.default_rng(0))
    assert len(out) == len(s)
    with pytest.raises(EmptyInputError):
        paste_instances(s, [], CFG, np.random.default_rng(0))


def test_paste_one_instance_at_rate_one():
    anchor = np.array([[12.0, 0.0, -1.7]])
    s = PointCloud(anchor, np.zeros(1), np.array([9]), np.zeros(1, int))
    inst = instance(4, m=50, dist=12.0)
    out = paste_instances(s, [inst], CutMixConfig({6}, {9}, max_paste=1), np.random.default_rng(0))
    assert len(out) == 51 and (out.labels[1:] == 6).all()
    np.testing.assert_allclose(out.coords[1:, :2].mean(axis=0), anchor[0, :2], atol=1e-9)
    assert out.coords[1:, 2].min() == pytest.approx(-1.7, abs=1e-12)
    assert len(np.unique(out.instance_ids[1:])) == 1 and out.instance_ids[1] == 1


@given(st.integers(0, 2 ** 31 - 1))
def test_paste_never_touches_scene_points(seed):
    s = scene(seed % 50, 60, [(7, 20, (5, 5))])
    bank = [instance(seed % 7, dist=10.0), instance(seed % 5 + 1, dist=25.0, cls=7)]
    out = paste_instances(s, bank, CutMixConfig({6, 7}, {9}, max_paste=4), np.random.default_rng(seed))
    n = len(s)
    assert np.array_equal(out.coords[:n], s.coords) and np.array_equal(out.labels[:n], s.labels)
    assert np.array_equal(out.remission[:n], s.remission)
    assert np.array_equal(out.instance_ids[:n], s.instance_ids)
    assert set(np.unique(out.labels[n:])) <= {6, 7}


def test_paste_rejects_overlapping_footprints():
    s = PointCloud(np.array([[10.0, 0.0, -1.7]]), np.zeros(1), np.array([9]), np.zeros(1, int))
    out = paste_instances(s, [instance(0, dist=10.0)], CutMixConfig({6}, {9}, max_paste=5),
                          np.random.default_rng(0))
    assert len(np.unique(out.instance_ids[1:])) == 1


def test_augmentation_is_reproducible():
    s = scene(3, 60)
    bank = [instance(1), instance(2, cls=7)]

    def run():
        r = np.random.default_rng(99)
        return paste_instances(global_augment(s, r), bank, CFG, r)

    a, b = run(), run()
    assert np.array_equal(a.coords, b.coords) and np.array_equal(a.labels, b.labels)


def test_bank_round_trip(tmp_path):
    bank = [instance(0), instance(1, m=12, cls=7)]
    bank[0].points = bank[0].points.astype(np.float32).astype(np.float64)
    bank[0].remission = bank[0].remission.astype(np.float32).astype(np.float64)
    save_bank(bank, tmp_path / "bank")
    loaded = load_bank(tmp_path / "bank")
    assert [len(b) for b in loaded] == [60, 12] and [b.class_id for b in loaded] == [6, 7]
    np.testing.assert_array_equal(loaded[0].points, bank[0].points)
    assert loaded[1].source_distance == bank[1].source_distance
    with pytest.raises(FormatError):
        load_bank(tmp_path)
