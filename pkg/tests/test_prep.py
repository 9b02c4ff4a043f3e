import numpy as np
import pytest

from grid import Volume, mask_volume
from models import ClipPolicy, EmptyMaskError, TissueClass, VolumeKind
from prep import (BodyMask, build_body_mask, dilate, hu_to_net, largest_component, net_to_hu, resolve_clip_value,
                  standardize)


def test_body_mask_without_dilation_is_the_body(clean_phantom):
    mr, _, labels = clean_phantom
    mask = build_body_mask(mr, 0)
    np.testing.assert_array_equal(mask.as_bool(), labels.values != TissueClass.EXTERIOR_AIR.value)
    assert mask.volume.kind == VolumeKind.MASK


def test_body_mask_fills_holes():
    values = np.zeros((9, 9, 9), dtype=np.float32)
    values[2:7, 2:7, 2:7] = 100.0
    values[4, 4, 4] = 0.0
    mask = build_body_mask(Volume(values, 1.0, VolumeKind.MR_LIKE), 0)
    assert mask.as_bool()[4, 4, 4]
    assert mask.as_bool().sum() == 125


def test_dilation_grows_monotonically(clean_phantom):
    mr, _, _ = clean_phantom
    sizes = [build_body_mask(mr, r).as_bool().sum() for r in (0, 1, 3)]
    assert sizes[0] < sizes[1] < sizes[2]


def test_dilate_single_voxel_by_one_is_six_connected_ball():
    mask = np.zeros((5, 5, 5), dtype=bool)
    mask[2, 2, 2] = True
    assert dilate(mask, 1).sum() == 7
    assert dilate(mask, 0).sum() == 1


def test_largest_component_keeps_the_bigger_blob():
    mask = np.zeros((10, 10, 10), dtype=bool)
    mask[0:2, 0:2, 0:2] = True
    mask[5:9, 5:9, 5:9] = True
    kept = largest_component(mask)
    assert kept.sum() == 64 and not kept[0, 0, 0]


def test_empty_mr_and_wrong_kind():
    with pytest.raises(EmptyMaskError):
        build_body_mask(Volume(np.zeros((4, 4, 4)), 1.0, VolumeKind.MR_LIKE))
    with pytest.raises(ValueError):
        build_body_mask(Volume(np.zeros((4, 4, 4)), 1.0, VolumeKind.CT_LIKE))


def _hundred():
    mr = Volume(np.arange(1, 101, dtype=np.float32).reshape(10, 10, 1), 1.0, VolumeKind.MR_LIKE)
    return mr, BodyMask(mask_volume(np.ones((10, 10, 1)), 1.0), 0)


def test_dynamic_percentile_is_nearest_rank():
    mr, mask = _hundred()
    assert resolve_clip_value(mr, mask, ClipPolicy.dynamic(99)) == 99.0
    assert resolve_clip_value(mr, mask, ClipPolicy.static(40)) == 40.0


def test_standardize_clips_and_scales():
    mr, mask = _hundred()
    out = standardize(mr, mask, ClipPolicy.static(50))
    assert out.values.max() == pytest.approx(255.0)
    assert out.values[4, 4, 0] == pytest.approx(45 / 50 * 255)
    assert (out.values[5:] == 255.0).all()


def test_hu_net_round_trip():
    assert hu_to_net(-1000.0) == pytest.approx(0.0)
    assert hu_to_net(3071.0) == pytest.approx(255.0)
    hu = np.linspace(-1000, 3071, 50)
    np.testing.assert_allclose(net_to_hu(hu_to_net(hu)), hu, atol=1e-2)
    assert hu_to_net(-5000.0) == 0.0


def test_standardize_is_idempotent_at_the_resolved_clip_value(noisy_phantom):
    mr, _, _ = noisy_phantom
    mask = build_body_mask(mr, 2)
    policy = ClipPolicy.dynamic(95)
    clip_value = resolve_clip_value(mr, mask, policy)
    once = standardize(mr, mask, policy)
    np.testing.assert_array_equal(standardize(mr, mask, ClipPolicy.static(clip_value)).values, once.values)
    twice = standardize(once, mask, ClipPolicy.static(255.0))
    np.testing.assert_allclose(twice.values, once.values, rtol=1e-6, atol=1e-4)


def test_standardized_values_stay_in_the_network_range():
    rng = np.random.default_rng(8)
    mask = BodyMask(mask_volume(np.ones((6, 6, 6)), 1.0), 0)
    for _ in range(50):
        scale = 10.0 ** rng.uniform(-2, 5)
        mr = Volume(rng.uniform(-0.2, 1.0, (6, 6, 6)) * scale, 1.0, VolumeKind.MR_LIKE)
        policy = (ClipPolicy.dynamic(rng.uniform(50, 99.9)) if rng.random() < 0.5
                  else ClipPolicy.static(scale * rng.uniform(0.01, 2.0)))
        out = standardize(mr, mask, policy).values
        assert out.min() >= 0.0 and out.max() <= 255.0
