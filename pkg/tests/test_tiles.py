import numpy as np
import pytest

from models import AugmentParams, ClipPolicy, ConfigError, ShapeMismatchError, TileSpec, View
from prep import build_body_mask, standardize
from tiles import (augment_slice, axis_origins, coverage_counts, epoch_patch_count, estimates_per_voxel, is_air,
                   plan_tiles, retained_window, training_slices)


def count_law_specs(patch, strides=None, crops=None):
    crops = range(patch // 4 + 1) if crops is None else crops
    for crop in crops:
        for stride in (range(1, patch - 2 * crop + 1) if strides is None else strides):
            if stride <= patch - 2 * crop:
                yield TileSpec(patch, stride, crop)


def axis_counts(extent, spec):
    counts = np.zeros(extent, dtype=np.int32)
    for origin in axis_origins(extent, spec):
        lo, hi = retained_window(origin, extent, spec)
        counts[lo:hi] += 1
    return counts


def test_axis_origins_clamp_the_last_patch():
    assert axis_origins(64, TileSpec(32, 32, 0)) == [0, 32]
    assert axis_origins(64, TileSpec(32, 24, 4)) == [0, 24, 32]
    assert axis_origins(32, TileSpec(32, 8, 4)) == [0]
    with pytest.raises(ShapeMismatchError):
        axis_origins(16, TileSpec(32, 8, 4))


def test_retained_window_does_not_crop_at_the_border():
    spec = TileSpec(32, 8, 4)
    assert retained_window(0, 64, spec) == (0, 28)
    assert retained_window(16, 64, spec) == (20, 44)
    assert retained_window(32, 64, spec) == (36, 64)


def test_off_grid_last_window_starts_where_the_previous_one_ends():
    spec = TileSpec(32, 24, 4)
    assert retained_window(24, 64, spec) == (28, 52)
    assert retained_window(32, 64, spec) == (52, 64)
    np.testing.assert_array_equal(coverage_counts((64, 64), spec), np.ones((64, 64), dtype=np.int32))

    no_crop = TileSpec(32, 24, 0)
    assert retained_window(32, 64, no_crop) == (56, 64)
    np.testing.assert_array_equal(axis_counts(64, no_crop), np.r_[np.ones(24), np.full(8, 2), np.ones(32)])


@pytest.mark.parametrize("patch", [16, 32])
def test_overlap_count_law_over_every_stride_and_crop(patch):
    extent = 3 * patch + 5
    for spec in count_law_specs(patch):
        counts = axis_counts(extent, spec)
        per_axis = estimates_per_voxel(spec) ** 0.5
        assert counts.min() >= 1, spec
        assert counts.max() == per_axis, spec


def test_overlap_count_law_at_patch_64():
    extent = 3 * 64 + 5
    for spec in count_law_specs(64, strides=(2, 5, 9, 24, 31, 40, 47, 64), crops=(0, 3, 8, 16)):
        counts = coverage_counts((extent, extent), spec)
        assert counts.min() >= 1, spec
        assert counts.max() == estimates_per_voxel(spec), spec


@pytest.mark.parametrize("extent", [32, 40, 57, 64, 75])
def test_counts_never_exceed_the_law_on_small_slices(extent):
    for spec in count_law_specs(32):
        counts = coverage_counts((extent, 33), spec)
        assert counts.min() >= 1, spec
        assert counts.max() <= estimates_per_voxel(spec), spec


def test_full_scale_overlap_count():
    spec = TileSpec(128, 32, 8)
    assert estimates_per_voxel(spec) == 16
    assert coverage_counts((256, 256), spec).max() == 16
    assert 3 * estimates_per_voxel(spec) == 48


def test_invalid_tile_specs():
    with pytest.raises(ConfigError):
        TileSpec(32, 32, 4)
    with pytest.raises(ConfigError):
        TileSpec(32, 8, 16)
    with pytest.raises(ConfigError):
        TileSpec(32, 0, 0)


def test_labels():
    spec = TileSpec(32, 8, 4)
    assert spec.label == "s8c4"
    assert spec.scaled_label() == "s32c16"
    assert len(plan_tiles((64, 40), spec)) == 5 * 2


def test_epoch_patch_count_matches_full_scale_totals():
    assert epoch_patch_count(2663, AugmentParams(), 200) == 5_326_000


def test_is_air():
    zeros = np.zeros((4, 4))
    assert is_air(zeros, zeros)
    assert not is_air(zeros, zeros + 1)


def test_plain_augmentation_is_a_crop():
    image = (np.arange(64 * 64, dtype=np.float32) + 1).reshape(64, 64)
    params = AugmentParams(rot_deg=(0, 0), scale=(1, 1), shear=(1, 1), cuts_per_slice=3)
    cuts = augment_slice(image, image, params, np.random.default_rng(0), patch=32)
    assert len(cuts) == 3
    for mr_cut, ct_cut in cuts:
        u0, v0 = divmod(int(round(float(mr_cut[0, 0]))) - 1, 64)
        np.testing.assert_allclose(mr_cut, image[u0:u0 + 32, v0:v0 + 32], atol=1e-3)
        np.testing.assert_array_equal(mr_cut, ct_cut)


def test_augmentation_is_deterministic_and_avoids_air():
    image = np.zeros((64, 64), dtype=np.float32)
    image[20:30, 20:30] = 100.0
    first = augment_slice(image, image, AugmentParams(), np.random.default_rng(4))
    second = augment_slice(image, image, AugmentParams(), np.random.default_rng(4))
    for (a, _), (b, _) in zip(first, second):
        np.testing.assert_array_equal(a, b)
    assert all(not is_air(mr, ct) for mr, ct in first)


def test_training_slices_skip_air_and_mirror(clean_phantom):
    mr, ct, _ = clean_phantom
    std = standardize(mr, build_body_mask(mr, 0), ClipPolicy.static(2500))
    plain = training_slices([(std, ct)], View.AXIAL, mirror=False)
    mirrored = training_slices([(std, ct)], View.AXIAL, mirror=True)
    assert 0 < len(plain) < mr.dims[2]
    assert len(mirrored) == 2 * len(plain)
    assert all(img.shape == (32, 32) for img, _ in plain)
    assert max(float(c.max()) for _, c in plain) <= 255.0


def test_warped_checkerboard_keeps_the_pixel_pairing():
    u, v = np.indices((64, 64))
    mr = np.where((u // 4 + v // 4) % 2, 200.0, 50.0).astype(np.float32)
    ct = 0.5 * mr
    params = AugmentParams(rot_deg=(12, 12), scale=(1.1, 1.1), shear=(1.03, 1.03), cuts_per_slice=4)
    cuts = augment_slice(mr, ct, params, np.random.default_rng(2), patch=32)
    for mr_cut, ct_cut in cuts:
        assert not np.isin(mr_cut, (0.0, 50.0, 200.0)).all()
        np.testing.assert_allclose(ct_cut, 0.5 * mr_cut, atol=1e-3)
