"""Sliding-patch inference per view and the per-voxel merge of overlapping estimates."""
import concurrent.futures
from typing import Dict, List, Tuple

import numpy as np

from gan.translator import Translator
from grid import Volume, slice_array, slice_volume
from models import (HU_MAX, HU_MIN, VOTE_BOUNDS, FusionMethod, FusionPolicy, ShapeMismatchError, TileSpec,
                    View, VolumeKind)
from prep import BodyMask, net_to_hu
from tiles import extract_patch, plan_tiles, retained_window

AIR_FILL = -1000.0


class EstimateAccumulator:
    """Ragged per-voxel store of HU estimates, kept as appended (flat index, value) chunks."""

    def __init__(self, dims: Tuple[int, int, int], spacing: float = 1.0):
        self.dims = tuple(int(n) for n in dims)
        self.spacing = spacing
        self.counts = np.zeros(self.dims, dtype=np.int32)
        self._index: List[np.ndarray] = []
        self._values: List[np.ndarray] = []

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def push(self, flat_index: np.ndarray, values: np.ndarray):
        flat_index = np.asarray(flat_index, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float32).ravel()
        if flat_index.shape != values.shape:
            raise ShapeMismatchError(f"{flat_index.size} voxel indices for {values.size} estimates")
        if flat_index.size == 0:
            return
        self._index.append(flat_index)
        self._values.append(values)
        self.counts += np.bincount(flat_index, minlength=self.size).reshape(self.dims).astype(np.int32)

    def merge(self, other: "EstimateAccumulator"):
        if other.dims != self.dims:
            raise ShapeMismatchError(f"cannot merge accumulators of dims {other.dims} into {self.dims}")
        self._index.extend(other._index)
        self._values.extend(other._values)
        self.counts += other.counts
        return self

    def estimates(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self._index:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float32)
        return np.concatenate(self._index), np.concatenate(self._values)

    def estimates_at(self, x: int, y: int, z: int) -> np.ndarray:
        index, values = self.estimates()
        return values[index == np.ravel_multi_index((x, y, z), self.dims)]


def _average(index, values, counts):
    sums = np.bincount(index, weights=values.astype(np.float64), minlength=counts.size)
    return sums[counts > 0] / counts[counts > 0]


def _median(index, values, counts):
    order = np.lexsort((values, index))
    ordered = values[order].astype(np.float64)
    present = counts[counts > 0]
    starts = np.concatenate(([0], np.cumsum(present)[:-1]))
    return (ordered[starts + (present - 1) // 2] + ordered[starts + present // 2]) / 2.0


def _vote(index, values, counts, policy: FusionPolicy):
    """Air/tissue/bone vote: majority class mean, else top-two mean, else mean of all."""
    present = counts > 0
    classes = np.digitize(values, VOTE_BOUNDS)
    weights = values.astype(np.float64)
    class_counts = np.stack([np.bincount(index[classes == k], minlength=counts.size)[present] for k in range(3)], 1)
    class_sums = np.stack([np.bincount(index[classes == k], weights=weights[classes == k],
                                       minlength=counts.size)[present] for k in range(3)], 1)
    n = counts[present].astype(np.float64)

    # stable sort on -count: equal counts rank air before tissue before bone
    ranked = np.argsort(-class_counts, axis=1, kind='stable')
    c1, c2 = (np.take_along_axis(class_counts, ranked[:, k:k + 1], 1)[:, 0] for k in (0, 1))
    s1, s2 = (np.take_along_axis(class_sums, ranked[:, k:k + 1], 1)[:, 0] for k in (0, 1))

    out = class_sums.sum(axis=1) / n
    minority = (c1 + c2) / n >= policy.minority_frac
    out[minority] = ((s1 + s2) / (c1 + c2))[minority]
    majority = c1 / n >= policy.majority_frac
    out[majority] = (s1 / c1)[majority]
    return out


def fuse(acc: EstimateAccumulator, policy: FusionPolicy = FusionPolicy(), fill: float = AIR_FILL) -> Volume:
    counts = acc.counts.reshape(-1)
    out = np.full(acc.size, fill, dtype=np.float64)
    index, values = acc.estimates()
    if index.size:
        if policy.method == FusionMethod.AVERAGE:
            merged = _average(index, values, counts)
        elif policy.method == FusionMethod.MEDIAN:
            merged = _median(index, values, counts)
        else:
            merged = _vote(index, values, counts, policy)
        out[counts > 0] = merged
    values = np.clip(out, HU_MIN, HU_MAX).astype(np.float32).reshape(acc.dims)
    return Volume(values, acc.spacing, VolumeKind.SYNTHETIC)


def synthesize_view(mr: Volume, mask: BodyMask, t: Translator, view: View, spec: TileSpec,
                    acc: EstimateAccumulator):
    """Translate every planned tile touching the mask and push its retained masked voxels."""
    if t.patch != spec.patch:
        raise ShapeMismatchError(f"translator patch {t.patch} does not match tile patch {spec.patch}")
    if mask.dims != mr.dims or acc.dims != mr.dims:
        raise ShapeMismatchError(f"MR {mr.dims}, mask {mask.dims} and accumulator {acc.dims} must agree")
    inside = mask.as_bool()
    if not inside.any():
        return acc
    voxel_ids = np.arange(acc.size, dtype=np.int64).reshape(acc.dims)
    extent = tuple(n for axis, n in enumerate(mr.dims) if axis != view.axis)
    tiles = plan_tiles(extent, spec)

    for index in range(mr.dims[view.axis]):
        keep_img = slice_array(inside, view, index)
        if not keep_img.any():
            continue
        mr_img = slice_volume(mr, view, index)
        ids_img = slice_array(voxel_ids, view, index)
        batch, sites, windows = [], [], []
        for u, v in tiles:
            (ulo, uhi), (vlo, vhi) = retained_window(u, extent[0], spec), retained_window(v, extent[1], spec)
            if not keep_img[ulo:uhi, vlo:vhi].any():
                continue
            batch.append(extract_patch(mr_img, (u, v), spec.patch))
            sites.append((view, index, u, v))
            windows.append((u, v, ulo, uhi, vlo, vhi))
        if not batch:
            continue
        hu = net_to_hu(t.translate_batch(np.stack(batch), sites))
        for k, (u, v, ulo, uhi, vlo, vhi) in enumerate(windows):
            keep = keep_img[ulo:uhi, vlo:vhi]
            acc.push(ids_img[ulo:uhi, vlo:vhi][keep], hu[k, ulo - u:uhi - u, vlo - v:vhi - v][keep])
    return acc


def accumulate_views(mr: Volume, mask: BodyMask, translators: Dict[View, Translator], spec: TileSpec,
                     workers: int = 1) -> EstimateAccumulator:
    """Per-view estimates into disjoint accumulators, merged in view order."""
    if not translators:
        raise ValueError("synthesis needs at least one view")
    views = list(translators)

    def run(view):
        return synthesize_view(mr, mask, translators[view], view, spec, EstimateAccumulator(mr.dims, mr.spacing))

    if workers > 1 and len(views) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=min(workers, len(views))) as executor:
            partials = list(executor.map(run, views))
    else:
        partials = [run(view) for view in views]

    acc = EstimateAccumulator(mr.dims, mr.spacing)
    for part in partials:
        acc.merge(part)
    return acc


def synthesize_volume(mr: Volume, mask: BodyMask, translators: Dict[View, Translator], spec: TileSpec,
                      policy: FusionPolicy = FusionPolicy(), fill: float = AIR_FILL, workers: int = 1) -> Volume:
    return fuse(accumulate_views(mr, mask, translators, spec, workers), policy, fill)


def count_map(acc: EstimateAccumulator) -> Volume:
    """Per-voxel estimate counts, stored as an unconstrained LABEL-kind volume."""
    return Volume(acc.counts.astype(np.float32), acc.spacing, VolumeKind.LABEL)
