"""Volume carrier, isotropic cubing, orthogonal slicing and the VOXV1 file format.

Volumes are indexed ``values[x, y, z]``. Slices keep the two remaining axes in
ascending order, so a slice image is indexed ``image[u, v]`` with

    Axial    (z fixed): u = x, v = y
    Coronal  (y fixed): u = x, v = z
    Sagittal (x fixed): u = y, v = z

On disk the payload is x-fastest (Fortran order of the [x, y, z] array).
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from models import HU_MAX, HU_MIN, ShapeMismatchError, View, VolumeFormatError, VolumeKind

VOLUME_MAGIC = b"VOXV1"
_HEADER = struct.Struct("<5sB3If")


@dataclass(frozen=True, eq=False)
class Volume:
    values: np.ndarray
    spacing: float
    kind: VolumeKind

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, order="C")
        if values.ndim != 3:
            raise ShapeMismatchError(f"volume values must be 3-D, got shape {values.shape}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.kind in (VolumeKind.CT_LIKE, VolumeKind.SYNTHETIC):
            if values.size and (values.min() < HU_MIN or values.max() > HU_MAX):
                raise ValueError(
                    f"{self.kind.name} values must lie in [{HU_MIN:g}, {HU_MAX:g}] HU, "
                    f"got [{values.min():g}, {values.max():g}]")
        if self.kind == VolumeKind.MASK and not np.isin(values, (0.0, 1.0)).all():
            raise ValueError("mask volumes hold only 0 and 1")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    def replace(self, values: np.ndarray, kind: VolumeKind = None) -> "Volume":
        return Volume(values, self.spacing, kind or self.kind)

    def __repr__(self):
        return f"Volume(dims={self.dims}, spacing={self.spacing:g}, kind={self.kind.name})"


def mask_volume(mask: np.ndarray, spacing: float) -> Volume:
    return Volume(np.asarray(mask, dtype=bool).astype(np.float32), spacing, VolumeKind.MASK)


def resample_to_cube(v: Volume, edge: int, pad_value: float) -> Volume:
    """Pad a volume to an ``edge``-sided cube, content centered."""
    if any(n > edge for n in v.dims):
        raise ShapeMismatchError(f"cube edge {edge} is smaller than volume dims {v.dims}; cropping is not supported")
    out = np.full((edge, edge, edge), pad_value, dtype=np.float32)
    offsets = [(edge - n) // 2 for n in v.dims]
    region = tuple(slice(o, o + n) for o, n in zip(offsets, v.dims))
    out[region] = v.values
    return v.replace(out)


def _slicer(view: View, index: int):
    return tuple(index if axis == view.axis else slice(None) for axis in range(3))


def slice_array(values: np.ndarray, view: View, index: int) -> np.ndarray:
    extent = values.shape[view.axis]
    if not 0 <= index < extent:
        raise IndexError(f"{view.value} slice {index} out of range [0, {extent})")
    return values[_slicer(view, index)]


def slice_volume(v: Volume, view: View, index: int) -> np.ndarray:
    """Return a read-only 2-D image of the volume at ``index`` along the view axis."""
    return slice_array(v.values, view, index)


def insert_slice(v: Volume, view: View, index: int, image: np.ndarray) -> Volume:
    expected = tuple(n for axis, n in enumerate(v.dims) if axis != view.axis)
    if image.shape != expected:
        raise ShapeMismatchError(f"{view.value} slice must have shape {expected}, got {image.shape}")
    if not 0 <= index < v.dims[view.axis]:
        raise IndexError(f"{view.value} slice {index} out of range [0, {v.dims[view.axis]})")
    values = np.array(v.values)
    values[_slicer(view, index)] = image
    return v.replace(values)


def slice_to_xyz(view: View, index: int, u: np.ndarray, v: np.ndarray):
    """Map in-plane (u, v) coordinates of a slice back to volume (x, y, z)."""
    fixed = np.full(np.shape(u), index)
    if view == View.AXIAL:
        return u, v, fixed
    if view == View.CORONAL:
        return u, fixed, v
    return fixed, u, v


def mirror_volume(v: Volume) -> Volume:
    """Left-right flip about the sagittal midplane (x axis)."""
    return v.replace(v.values[::-1, :, :])


def write_volume(v: Volume, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, ny, nz = v.dims
    header = _HEADER.pack(VOLUME_MAGIC, v.kind.value, nx, ny, nz, v.spacing)
    payload = v.values.astype("<f4").tobytes(order="F")
    with open(path, 'wb') as f:
        f.write(header)
        f.write(payload)


def read_volume(path: Union[str, Path]) -> Volume:
    with open(path, 'rb') as f:
        blob = f.read()
    if len(blob) < len(VOLUME_MAGIC) or blob[:len(VOLUME_MAGIC)] != VOLUME_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic, not a VOXV1 volume")
    if len(blob) < _HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    _, kind_code, nx, ny, nz, spacing = _HEADER.unpack_from(blob)
    try:
        kind = VolumeKind(kind_code)
    except ValueError:
        raise VolumeFormatError(f"{path}: unknown volume kind code {kind_code}") from None
    expected = nx * ny * nz * 4
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise VolumeFormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise VolumeFormatError(f"{path}: payload of {len(payload)} bytes does not match dims {(nx, ny, nz)}")
    values = np.frombuffer(payload, dtype="<f4").reshape((nx, ny, nz), order="F")
    return Volume(values, spacing, kind)
