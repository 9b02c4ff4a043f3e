"""Inference tile planning (stride/crop geometry) and the training augmentation recipe."""
import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from grid import Volume, mirror_volume, slice_volume
from models import AugmentParams, ShapeMismatchError, TileSpec, View
from prep import hu_to_net

Image2D = np.ndarray
Window = Tuple[int, int]


def axis_origins(extent: int, spec: TileSpec) -> List[int]:
    """Origins 0, s, 2s, ... plus a final origin clamped to end exactly at the border."""
    if extent < spec.patch:
        raise ShapeMismatchError(f"extent {extent} is smaller than the patch size {spec.patch}")
    last = extent - spec.patch
    origins = list(range(0, last + 1, spec.stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def plan_tiles(extent: Tuple[int, int], spec: TileSpec) -> List[Tuple[int, int]]:
    width, height = extent
    return [(u, v) for u in axis_origins(width, spec) for v in axis_origins(height, spec)]


def retained_window(origin: int, extent: int, spec: TileSpec) -> Window:
    """Half-open span of a patch kept after cropping; no crop on edges at the slice border.

    A final origin clamped off the stride grid keeps only what the previous
    window left uncovered, so its retained span never overlaps the one before.
    """
    if origin % spec.stride:
        return (origin // spec.stride) * spec.stride + spec.patch - spec.crop, extent
    lo = origin if origin == 0 else origin + spec.crop
    end = origin + spec.patch
    hi = end if end == extent else end - spec.crop
    return lo, hi


def estimates_per_voxel(spec: TileSpec) -> int:
    """Interior maximum of overlapping retained windows, per view."""
    return math.ceil((spec.patch - 2 * spec.crop) / spec.stride) ** 2


def coverage_counts(extent: Tuple[int, int], spec: TileSpec) -> np.ndarray:
    """Brute-force per-pixel count of retained windows over a slice."""
    width, height = extent
    counts = np.zeros(extent, dtype=np.int32)
    for u, v in plan_tiles(extent, spec):
        ulo, uhi = retained_window(u, width, spec)
        vlo, vhi = retained_window(v, height, spec)
        counts[ulo:uhi, vlo:vhi] += 1
    return counts


def extract_patch(image: Image2D, origin: Tuple[int, int], patch: int) -> Image2D:
    u, v = origin
    return image[u:u + patch, v:v + patch]


def epoch_patch_count(slices_per_view: int, params: AugmentParams, epochs: int) -> int:
    return slices_per_view * (2 if params.mirror else 1) * params.cuts_per_slice * epochs


def _affine(shape, angle_deg: float, scale: float, shear: float):
    theta = np.deg2rad(angle_deg)
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    # shear factor k in [0.97, 1.03] is applied as the off-diagonal term k - 1
    shearing = np.array([[1.0, shear - 1.0], [0.0, 1.0]])
    forward = rotation @ (scale * np.eye(2)) @ shearing
    inverse = np.linalg.inv(forward)
    center = (np.asarray(shape, dtype=np.float64) - 1) / 2.0
    return inverse, center - inverse @ center


def is_air(mr_patch: Image2D, ct_patch: Image2D) -> bool:
    """Air-only in network units: MR all zero and CT all at -1000 HU (0)."""
    return not (np.any(mr_patch > 0) or np.any(ct_patch > 0))


def augment_slice(mr_slice: Image2D, ct_slice: Image2D, params: AugmentParams,
                  rng: np.random.Generator, patch: int = 32) -> List[Tuple[Image2D, Image2D]]:
    """Random affine on a paired slice, then ``cuts_per_slice`` random patch cuts.

    Both images are in network units. They share the sampled transform and are
    resampled bilinearly with air (0) outside the field of view.
    """
    if mr_slice.shape != ct_slice.shape:
        raise ShapeMismatchError(f"paired slices differ in shape: {mr_slice.shape} vs {ct_slice.shape}")
    width, height = mr_slice.shape
    if width < patch or height < patch:
        raise ShapeMismatchError(f"slice {mr_slice.shape} is smaller than patch {patch}")

    angle = rng.uniform(*params.rot_deg)
    scale = rng.uniform(*params.scale)
    shear = rng.uniform(*params.shear)
    matrix, offset = _affine(mr_slice.shape, angle, scale, shear)
    warped = [ndimage.affine_transform(np.asarray(img, dtype=np.float32), matrix, offset=offset,
                                       order=1, mode='constant', cval=0.0)
              for img in (mr_slice, ct_slice)]

    cuts = []
    for _ in range(params.cuts_per_slice):
        for _ in range(params.max_tries):
            origin = (int(rng.integers(0, width - patch + 1)), int(rng.integers(0, height - patch + 1)))
            mr_patch, ct_patch = (extract_patch(img, origin, patch) for img in warped)
            if not is_air(mr_patch, ct_patch):
                break
        # after max_tries the last draw is kept
        cuts.append((mr_patch.copy(), ct_patch.copy()))
    return cuts


def training_slices(pairs: Sequence[Tuple[Volume, Volume]], view: View,
                    mirror: bool = True) -> List[Tuple[Image2D, Image2D]]:
    """Non-air (MR, CT) slice pairs in network units for one view.

    ``pairs`` holds standardized MR volumes with their CT volumes in HU. With
    ``mirror`` the left-right flipped volumes contribute their slices too.
    """
    slices = []
    for mr, ct in pairs:
        sources = [(mr, ct)]
        if mirror:
            sources.append((mirror_volume(mr), mirror_volume(ct)))
        for mr_vol, ct_vol in sources:
            for index in range(mr_vol.dims[view.axis]):
                mr_img = slice_volume(mr_vol, view, index)
                ct_img = hu_to_net(slice_volume(ct_vol, view, index))
                if is_air(mr_img, ct_img):
                    continue
                slices.append((np.array(mr_img), ct_img))
    return slices
