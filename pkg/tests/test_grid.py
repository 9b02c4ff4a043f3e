import struct

import numpy as np
import pytest

from grid import (Volume, insert_slice, mirror_volume, read_volume, resample_to_cube, slice_to_xyz, slice_volume,
                  write_volume)
from models import ShapeMismatchError, View, VolumeFormatError, VolumeKind


def ramp(dims=(4, 5, 6), kind=VolumeKind.MR_LIKE):
    return Volume(np.arange(np.prod(dims), dtype=np.float32).reshape(dims), 2.0, kind)


@pytest.mark.parametrize("view, expected", [
    (View.AXIAL, lambda a: a[:, :, 2]),
    (View.CORONAL, lambda a: a[:, 2, :]),
    (View.SAGITTAL, lambda a: a[2, :, :]),
])
def test_slice_axes_follow_the_documented_uv_order(view, expected):
    v = ramp()
    np.testing.assert_array_equal(slice_volume(v, view, 2), expected(v.values))


def test_slice_out_of_range():
    with pytest.raises(IndexError):
        slice_volume(ramp(), View.AXIAL, 6)


def test_insert_slice_only_touches_one_plane():
    v = ramp()
    image = np.full((4, 6), -1.0, dtype=np.float32)
    out = insert_slice(v, View.CORONAL, 3, image)
    np.testing.assert_array_equal(out.values[:, 3, :], image)
    untouched = np.delete(out.values, 3, axis=1)
    np.testing.assert_array_equal(untouched, np.delete(v.values, 3, axis=1))
    with pytest.raises(ShapeMismatchError):
        insert_slice(v, View.CORONAL, 3, np.zeros((4, 5)))


def test_slice_to_xyz():
    u, v = np.array([1, 2]), np.array([3, 4])
    x, y, z = slice_to_xyz(View.CORONAL, 7, u, v)
    np.testing.assert_array_equal(x, u)
    np.testing.assert_array_equal(y, [7, 7])
    np.testing.assert_array_equal(z, v)
    x, y, z = slice_to_xyz(View.SAGITTAL, 5, u, v)
    np.testing.assert_array_equal(x, [5, 5])
    np.testing.assert_array_equal(y, u)


def test_resample_to_cube_centers_content():
    v = Volume(np.ones((2, 2, 2)), 1.0, VolumeKind.MR_LIKE)
    cube = resample_to_cube(v, 4, pad_value=0.0)
    assert cube.dims == (4, 4, 4)
    assert cube.values[1:3, 1:3, 1:3].all()
    assert cube.values.sum() == 8
    with pytest.raises(ShapeMismatchError):
        resample_to_cube(ramp(), 4, pad_value=0.0)


def test_ct_values_outside_hu_range_are_rejected():
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), 4000.0), 1.0, VolumeKind.CT_LIKE)


def test_volume_values_are_read_only():
    v = ramp()
    with pytest.raises(ValueError):
        v.values[0, 0, 0] = 1.0


def test_mirror_twice_is_identity():
    v = ramp()
    np.testing.assert_array_equal(mirror_volume(mirror_volume(v)).values, v.values)
    np.testing.assert_array_equal(mirror_volume(v).values[0], v.values[-1])


def test_write_read_round_trip(tmp_path):
    v = ramp(kind=VolumeKind.LABEL)
    write_volume(v, tmp_path / "v.voxv")
    back = read_volume(tmp_path / "v.voxv")
    assert back.dims == v.dims and back.spacing == v.spacing and back.kind == VolumeKind.LABEL
    np.testing.assert_array_equal(back.values, v.values)


def test_payload_is_x_fastest(tmp_path):
    v = ramp()
    write_volume(v, tmp_path / "v.voxv")
    blob = (tmp_path / "v.voxv").read_bytes()
    header = struct.calcsize("<5sB3If")
    first, second = struct.unpack_from("<2f", blob, header)
    assert (first, second) == (v.values[0, 0, 0], v.values[1, 0, 0])


def test_bad_files_raise_volume_format_error(tmp_path):
    path = tmp_path / "v.voxv"
    write_volume(ramp(), path)
    blob = path.read_bytes()

    (tmp_path / "magic.voxv").write_bytes(b"NOPE1" + blob[5:])
    (tmp_path / "short.voxv").write_bytes(blob[:-4])
    (tmp_path / "long.voxv").write_bytes(blob + b"\0\0\0\0")
    for name in ("magic", "short", "long"):
        with pytest.raises(VolumeFormatError):
            read_volume(tmp_path / f"{name}.voxv")


def test_padding_a_short_ct_keeps_every_original_voxel():
    rng = np.random.default_rng(5)
    values = rng.uniform(-900, 2000, (32, 32, 16)).astype(np.float32)
    cube = resample_to_cube(Volume(values, 1.0, VolumeKind.CT_LIKE), 32, pad_value=-1000.0)
    assert cube.dims == (32, 32, 32) and cube.kind == VolumeKind.CT_LIKE
    np.testing.assert_array_equal(cube.values[:, :, 8:24], values)
    assert (cube.values[:, :, :8] == -1000).all() and (cube.values[:, :, 24:] == -1000).all()
    assert int((cube.values == -1000).sum()) == 32 * 32 * 16
    np.testing.assert_array_equal(np.sort(cube.values[cube.values != -1000]), np.sort(values.ravel()))


def test_resample_of_a_full_cube_is_the_identity():
    v = ramp((6, 6, 6))
    np.testing.assert_array_equal(resample_to_cube(v, 6, pad_value=0.0).values, v.values)


def test_slice_then_insert_is_the_identity_everywhere():
    v = ramp((3, 4, 5))
    for view in View:
        for index in range(v.dims[view.axis]):
            back = insert_slice(v, view, index, np.array(slice_volume(v, view, index)))
            np.testing.assert_array_equal(back.values, v.values)


def test_hot_voxel_lands_at_its_in_plane_coordinates():
    values = np.zeros((3, 4, 5), dtype=np.float32)
    values[1, 2, 3] = 1.0
    v = Volume(values, 1.0, VolumeKind.MR_LIKE)
    for view, index, uv in ((View.AXIAL, 3, (1, 2)), (View.CORONAL, 2, (1, 3)), (View.SAGITTAL, 1, (2, 3))):
        image = slice_volume(v, view, index)
        assert image[uv] == 1.0 and image.sum() == 1.0
        assert tuple(int(c) for c in slice_to_xyz(view, index, *uv)) == (1, 2, 3)
