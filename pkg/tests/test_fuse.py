import numpy as np
import pytest

from fuse import AIR_FILL, EstimateAccumulator, accumulate_views, count_map, fuse, synthesize_volume
from gan.translator import IdentityTranslator, OracleTranslator
from grid import Volume, mask_volume
from metrics import mae
from models import (ClipPolicy, FusionMethod, FusionPolicy, PhantomSpec, ShapeMismatchError, TileSpec, View,
                    VolumeKind)
from phantom import generate_pair, oracle_translate
from prep import BodyMask, build_body_mask, net_to_hu, standardize
from tiles import coverage_counts, estimates_per_voxel

AVERAGE, MEDIAN, VOTE = (FusionPolicy(m) for m in FusionMethod)


def single_voxel(values):
    acc = EstimateAccumulator((2, 1, 1))
    acc.push(np.zeros(len(values), dtype=np.int64), np.asarray(values, dtype=np.float32))
    return acc


def fused_value(values, policy):
    return float(fuse(single_voxel(values), policy).values[0, 0, 0])


def test_average_and_median():
    assert fused_value([10, 20, 60], AVERAGE) == pytest.approx(30.0)
    assert fused_value([10, 20, 60], MEDIAN) == pytest.approx(20.0)
    assert fused_value([40, 10, 30, 20], MEDIAN) == pytest.approx(25.0)


@pytest.mark.parametrize("values, expected", [
    ([-900, -800, 50], -850.0),              # air majority
    ([-900, 50, 60, 700], (-900 + 50 + 60) / 3),  # tissue + air (tie with bone goes to air)
    ([-900, 50, 700], (-900 + 50) / 2),      # three-way tie: air and tissue
    ([100, 110, 120], 110.0),                # unanimous
])
def test_vote(values, expected):
    assert fused_value(values, VOTE) == pytest.approx(expected)


def test_vote_without_a_winning_pair_falls_back_to_the_mean():
    strict = FusionPolicy(FusionMethod.VOTE, majority_frac=0.9, minority_frac=0.9)
    assert fused_value([-900, 50, 700], strict) == pytest.approx((-900 + 50 + 700) / 3)


def test_unvisited_voxels_get_the_fill_value():
    out = fuse(single_voxel([0.0]), AVERAGE)
    assert out.kind == VolumeKind.SYNTHETIC
    assert out.values[1, 0, 0] == AIR_FILL


def test_push_and_merge_bookkeeping():
    a, b = EstimateAccumulator((2, 2, 2)), EstimateAccumulator((2, 2, 2))
    a.push([0, 0, 7], [1.0, 2.0, 3.0])
    b.push([7], [5.0])
    a.merge(b)
    assert a.total == 4 and a.counts[1, 1, 1] == 2
    np.testing.assert_array_equal(sorted(a.estimates_at(1, 1, 1)), [3.0, 5.0])
    with pytest.raises(ShapeMismatchError):
        a.push([0, 1], [1.0])
    with pytest.raises(ShapeMismatchError):
        a.merge(EstimateAccumulator((3, 3, 3)))


def full_mask(dims):
    return BodyMask(mask_volume(np.ones(dims), 1.0), 0)


def random_mr(dims, seed=0):
    values = np.random.default_rng(seed).uniform(1, 255, dims).astype(np.float32)
    return Volume(values, 1.0, VolumeKind.MR_LIKE)


def test_count_map_follows_the_overlap_law_per_view():
    dims = (40, 40, 40)
    spec = TileSpec(16, 4, 2)
    mr = random_mr(dims)
    per_slice = coverage_counts((40, 40), spec)

    axial = accumulate_views(mr, full_mask(dims), {View.AXIAL: IdentityTranslator(16)}, spec)
    assert (axial.counts == per_slice[:, :, None]).all()

    three = accumulate_views(mr, full_mask(dims), {v: IdentityTranslator(16) for v in View}, spec)
    expected = per_slice[:, :, None] + per_slice[:, None, :] + per_slice[None, :, :]
    np.testing.assert_array_equal(three.counts, expected)
    counts = count_map(three)
    assert counts.kind == VolumeKind.LABEL
    assert counts.values.max() == 3 * 9


def test_misaligned_stride_never_overcounts():
    dims = (37, 37, 37)
    spec = TileSpec(16, 5, 2)
    mr = random_mr(dims, seed=3)
    per_slice = coverage_counts((37, 37), spec)
    assert per_slice.min() == 1 and per_slice.max() == estimates_per_voxel(spec) == 9

    three = accumulate_views(mr, full_mask(dims), {v: IdentityTranslator(16) for v in View}, spec)
    np.testing.assert_array_equal(three.counts,
                                  per_slice[:, :, None] + per_slice[:, None, :] + per_slice[None, :, :])
    assert three.counts.max() <= 3 * estimates_per_voxel(spec)
    sct = fuse(three, MEDIAN)
    np.testing.assert_allclose(sct.values, net_to_hu(mr.values), atol=1e-2)


def test_identity_reconstruction_is_exact_for_every_tiling():
    dims = (32, 32, 32)
    mr = random_mr(dims, seed=1)
    expected = net_to_hu(mr.values)
    for spec in (TileSpec(16, 16, 0), TileSpec(16, 4, 2)):
        sct = synthesize_volume(mr, full_mask(dims), {v: IdentityTranslator(16) for v in View}, spec, MEDIAN)
        np.testing.assert_allclose(sct.values, expected, atol=1e-2)


def test_masked_out_voxels_receive_no_estimates():
    dims = (32, 32, 32)
    inside = np.zeros(dims, dtype=bool)
    inside[8:24, 8:24, 8:24] = True
    mask = BodyMask(mask_volume(inside, 1.0), 0)
    acc = accumulate_views(random_mr(dims), mask, {View.AXIAL: IdentityTranslator(16)}, TileSpec(16, 8, 0))
    assert (acc.counts[~inside] == 0).all() and (acc.counts[inside] > 0).all()


def test_parallel_views_match_sequential():
    dims = (32, 32, 32)
    mr = random_mr(dims, seed=2)
    translators = {v: IdentityTranslator(16) for v in View}
    spec = TileSpec(16, 8, 2)
    one = fuse(accumulate_views(mr, full_mask(dims), translators, spec, workers=1), VOTE)
    three = fuse(accumulate_views(mr, full_mask(dims), translators, spec, workers=3), VOTE)
    np.testing.assert_array_equal(one.values, three.values)


def test_translator_and_tile_patch_must_agree():
    dims = (32, 32, 32)
    with pytest.raises(ShapeMismatchError):
        accumulate_views(random_mr(dims), full_mask(dims), {View.AXIAL: IdentityTranslator(8)}, TileSpec(16, 8, 0))


def test_oracle_fusion_reproduces_the_noise_free_ct():
    mr, _, labels = generate_pair(PhantomSpec(seed=21, edge=64))
    clean = oracle_translate(labels)
    mask = build_body_mask(mr, 3)
    std = standardize(mr, mask, ClipPolicy.static(2500))
    for spec in (TileSpec(32, 32, 0), TileSpec(32, 8, 2), TileSpec(32, 8, 4)):
        acc = accumulate_views(std, mask, {v: OracleTranslator(labels, 32) for v in View}, spec)
        for policy in (AVERAGE, MEDIAN, VOTE):
            assert mae(clean, fuse(acc, policy), mask.volume) <= 8.0, (spec.label, policy.label)
