import numpy as np
import pytest

from generator import DatasetGenerator, find_case, load_case, load_cases
from grid import mask_volume, mirror_volume
from metrics import mae
from models import (ConfigError, HU_MAX, HU_MIN, MissingArtifactError, PhantomSpec, TissueClass, VolumeKind)
from phantom import CLASS_HU, apply_bias_field, class_to_hu, generate_pair, oracle_translate


def test_generation_is_deterministic_in_the_seed():
    a = generate_pair(PhantomSpec(seed=11, edge=24))
    b = generate_pair(PhantomSpec(seed=11, edge=24))
    c = generate_pair(PhantomSpec(seed=12, edge=24))
    for left, right in zip(a, b):
        np.testing.assert_array_equal(left.values, right.values)
    assert not np.array_equal(a[0].values, c[0].values)


def test_kinds_and_ranges(noisy_phantom):
    mr, ct, labels = noisy_phantom
    assert (mr.kind, ct.kind, labels.kind) == (VolumeKind.MR_LIKE, VolumeKind.CT_LIKE, VolumeKind.LABEL)
    assert mr.values.min() >= 0
    assert HU_MIN <= ct.values.min() and ct.values.max() <= HU_MAX
    exterior = labels.values == TissueClass.EXTERIOR_AIR.value
    assert exterior[0, 0, 0]
    assert (mr.values[exterior] == 0).all()
    assert (ct.values[exterior] == -1000).all()


def test_every_normal_class_is_present(clean_phantom):
    _, _, labels = clean_phantom
    present = set(np.unique(labels.values).astype(int))
    assert {t.value for t in (TissueClass.EXTERIOR_AIR, TissueClass.SOFT_TISSUE, TissueClass.BONE)} <= present
    assert TissueClass.TUMOR.value not in present


def test_noise_free_ct_matches_the_oracle(clean_phantom):
    _, ct, labels = clean_phantom
    np.testing.assert_array_equal(oracle_translate(labels).values, ct.values)
    np.testing.assert_array_equal(class_to_hu(labels.values), ct.values)
    with pytest.raises(ValueError):
        oracle_translate(ct)


def test_abnormal_case_has_tumor_and_streak():
    mr, ct, labels = generate_pair(PhantomSpec(seed=5, edge=32, tumor=True, artifact=True))
    assert (labels.values == TissueClass.TUMOR.value).any()
    assert ct.values.max() > CLASS_HU[TissueClass.BONE] + 1000


def test_bias_field_keeps_background_at_zero(clean_phantom):
    mr, _, _ = clean_phantom
    biased = apply_bias_field(mr, seed=1)
    assert (biased.values[mr.values == 0] == 0).all()
    assert not np.allclose(biased.values, mr.values)
    np.testing.assert_array_equal(apply_bias_field(mr, seed=1).values, biased.values)


def test_invalid_spec_is_a_config_error():
    with pytest.raises(ConfigError):
        PhantomSpec(seed=0, body=(0.6, 0.3, 0.3))
    with pytest.raises(ConfigError):
        PhantomSpec(seed=0, n_bone_shells=0)


def test_dataset_generator_writes_and_loads_cases(tmp_path):
    splits = {'train': [("train00", PhantomSpec(seed=1, edge=16))],
              'test': [("test00", PhantomSpec(seed=2, edge=16))]}
    written = DatasetGenerator(tmp_path, splits).generate()
    assert len(written) == 8
    assert (tmp_path / "phantoms" / "test" / "test00.manifest.txt").read_text().startswith("case_id=test00\n")

    case = load_case(tmp_path, "test", "test00")
    mr, ct, labels = generate_pair(splits['test'][0][1])
    np.testing.assert_array_equal(case.ct.values, ct.values)
    assert [c.case_id for c in load_cases(tmp_path, splits, 'train')] == ["train00"]
    assert find_case(splits, "test00") == "test"


def test_missing_and_unknown_cases(tmp_path):
    with pytest.raises(MissingArtifactError, match="test00_mr.voxv"):
        load_case(tmp_path, "test", "test00")
    with pytest.raises(ConfigError):
        find_case({'test': []}, "test00")


def test_body_center_is_soft_tissue(noisy_phantom):
    _, ct, labels = noisy_phantom
    center = (labels.dims[0] // 2,) * 3
    assert labels.values[center] == TissueClass.SOFT_TISSUE.value
    assert abs(ct.values[center] - CLASS_HU[TissueClass.SOFT_TISSUE]) <= 3 * 20.0


def test_bone_and_interior_air_look_alike_in_mr():
    spec = PhantomSpec(seed=13, edge=64, noise_sigma=20.0)
    mr, ct, labels = generate_pair(spec)
    means = {t: float(mr.values[labels.values == t.value].mean())
             for t in (TissueClass.BONE, TissueClass.INTERIOR_AIR, TissueClass.SOFT_TISSUE)}
    assert abs(means[TissueClass.BONE] - means[TissueClass.INTERIOR_AIR]) < spec.noise_sigma
    assert means[TissueClass.SOFT_TISSUE] > 10 * means[TissueClass.BONE]
    bone_hu = ct.values[labels.values == TissueClass.BONE.value].mean()
    air_hu = ct.values[labels.values == TissueClass.INTERIOR_AIR.value].mean()
    assert bone_hu - air_hu > 1000


def test_mirrored_phantom_without_tumor_is_itself():
    for volume in generate_pair(PhantomSpec(seed=9, edge=32, noise_sigma=0.0)):
        np.testing.assert_array_equal(mirror_volume(volume).values, volume.values)
    _, _, labels = generate_pair(PhantomSpec(seed=9, edge=32, noise_sigma=0.0, tumor=True))
    assert not np.array_equal(mirror_volume(labels).values, labels.values)


def test_oracle_error_against_noisy_ct_is_the_half_normal_mean(noisy_phantom):
    _, ct, labels = noisy_phantom
    # tissue and bone stay far from the HU clamp, so their noise is untouched
    unclamped = np.isin(labels.values, (TissueClass.SOFT_TISSUE.value, TissueClass.BONE.value))
    expected = 20.0 * np.sqrt(2.0 / np.pi)
    assert mae(ct, oracle_translate(labels), mask_volume(unclamped, ct.spacing)) == pytest.approx(expected, rel=0.1)
    exterior = labels.values == TissueClass.EXTERIOR_AIR.value
    np.testing.assert_array_equal(ct.values[exterior], oracle_translate(labels).values[exterior])
