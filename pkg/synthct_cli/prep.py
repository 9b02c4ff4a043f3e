from dataclasses import dataclass

import click
import numpy as np
from scipy import ndimage

from grid import Volume, mask_volume
from models import (HU_MAX, HU_MIN, NET_MAX, ClipKind, ClipPolicy, EmptyMaskError, ShapeMismatchError,
                    VolumeKind, debug_enabled)

SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class BodyMask:
    volume: Volume
    dilation_voxels: int

    @property
    def values(self) -> np.ndarray:
        return self.volume.values

    @property
    def dims(self):
        return self.volume.dims

    def as_bool(self) -> np.ndarray:
        return self.volume.values > 0


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by a Euclidean ball of ``radius`` voxels."""
    if radius <= 0:
        return mask.copy()
    if not mask.any():
        return mask.copy()
    distance = ndimage.distance_transform_edt(~mask)
    return distance <= radius


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(mask, structure=SIX_CONNECTED)
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def build_body_mask(mr: Volume, dilate_voxels: int = 12) -> BodyMask:
    """Largest 6-connected nonzero region, holes filled, dilated by a ball."""
    if mr.kind != VolumeKind.MR_LIKE:
        raise ValueError(f"body masks are built from MR volumes, got {mr.kind.name}")
    foreground = mr.values != 0
    if not foreground.any():
        raise EmptyMaskError("MR volume is all zero: no body to mask")
    body = ndimage.binary_fill_holes(largest_component(foreground), structure=SIX_CONNECTED)
    return BodyMask(mask_volume(dilate(body, dilate_voxels), mr.spacing), dilate_voxels)


def resolve_clip_value(mr: Volume, mask: BodyMask, policy: ClipPolicy) -> float:
    if policy.kind == ClipKind.STATIC:
        return float(policy.value)
    masked = mr.values[mask.as_bool()]
    if masked.size == 0:
        raise EmptyMaskError("dynamic percentile clipping needs a nonempty mask")
    # nearest-rank percentile
    return float(np.percentile(masked, policy.value, method="inverted_cdf"))


def standardize(mr: Volume, mask: BodyMask, policy: ClipPolicy) -> Volume:
    """Clip MR intensities and scale them to the network range [0, 255]."""
    if mask.dims != mr.dims:
        raise ShapeMismatchError(f"mask dims {mask.dims} differ from MR dims {mr.dims}")
    clip_value = resolve_clip_value(mr, mask, policy)
    if clip_value <= 0:
        raise EmptyMaskError(f"resolved clip value {clip_value:g} is not positive")
    scaled = np.clip(mr.values, 0.0, clip_value) / clip_value * NET_MAX
    return mr.replace(scaled)


def _clamped(x, lo, hi, what):
    x = np.asarray(x, dtype=np.float32)
    if debug_enabled() and (np.any(x < lo) or np.any(x > hi)):
        click.secho(f"⚠ {what} input outside [{lo:g}, {hi:g}] clamped", fg='yellow')
    return np.clip(x, lo, hi)


def hu_to_net(x):
    """Linear map HU [-1000, 3071] -> [0, 255]."""
    x = _clamped(x, HU_MIN, HU_MAX, "HU")
    return np.clip((x - HU_MIN) / (HU_MAX - HU_MIN) * NET_MAX, 0.0, NET_MAX)


def net_to_hu(y):
    """Inverse of hu_to_net."""
    y = _clamped(y, 0.0, NET_MAX, "network-range")
    return np.clip(y / NET_MAX * (HU_MAX - HU_MIN) + HU_MIN, HU_MIN, HU_MAX)
