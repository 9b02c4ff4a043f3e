"""Region masks, MAE/ME, parallel-ray DRRs and per-case report tables.

Errors are signed CT minus sCT, so a synthetic CT that reads too low gives a
positive ME.
"""
import math
from pathlib import Path
from typing import Iterable, List

import click
import numpy as np
import pandas as pd

from grid import Volume, mask_volume
from models import EmptyMaskError, RegionKind, RegionMetrics, RegionSpec, ShapeMismatchError, View, VolumeKind
from prep import dilate

REPORT_COLUMNS = ['case_id', 'model', 'policy', 'tilespec', 'region', 'mae_hu', 'me_hu', 'voxels',
                  'mae_sd_hu', 'me_sd_hu']
_GROUP_KEYS = ['model', 'policy', 'tilespec', 'region']
_HU_KINDS = (VolumeKind.CT_LIKE, VolumeKind.SYNTHETIC)


def expansion_for_spacing(spacing: float, limit_mm: float = 5.0) -> int:
    """Largest whole number of voxels whose extent stays under ``limit_mm``."""
    return max(0, math.ceil(limit_mm / spacing) - 1)


def region_mask(ct_ref: Volume, body: np.ndarray, spec: RegionSpec) -> Volume:
    """Threshold on the reference CT, intersect with the un-dilated body, then expand.

    An empty Bone/Air region is allowed and reported with a warning.
    """
    body = np.asarray(body, dtype=bool)
    if body.shape != ct_ref.dims:
        raise ShapeMismatchError(f"body mask {body.shape} does not match CT {ct_ref.dims}")
    if spec.kind == RegionKind.BODY:
        core = body
    elif spec.kind == RegionKind.BONE:
        core = (ct_ref.values > spec.threshold) & body
    else:
        core = (ct_ref.values < spec.threshold) & body
    if not core.any():
        click.secho(f"⚠ {spec.kind.value} region is empty after thresholding", fg='yellow')
    return mask_volume(dilate(core, spec.expand), ct_ref.spacing)


def _errors(ct: Volume, sct: Volume, m: Volume) -> np.ndarray:
    if ct.dims != sct.dims or ct.dims != m.dims:
        raise ShapeMismatchError(f"CT {ct.dims}, sCT {sct.dims} and mask {m.dims} must share dims")
    inside = m.values > 0
    if not inside.any():
        raise EmptyMaskError("metrics need a nonempty region mask")
    return ct.values[inside].astype(np.float64) - sct.values[inside].astype(np.float64)


def mae(ct: Volume, sct: Volume, m: Volume) -> float:
    return float(np.mean(np.abs(_errors(ct, sct, m))))


def me(ct: Volume, sct: Volume, m: Volume) -> float:
    return float(np.mean(_errors(ct, sct, m)))


def region_metrics(case_id: str, ct: Volume, sct: Volume, m: Volume, region: RegionKind,
                   model: str = "", policy: str = "", tilespec: str = "") -> RegionMetrics:
    err = _errors(ct, sct, m)
    ddof = 1 if err.size > 1 else 0
    return RegionMetrics(case_id=case_id, region=region, mae=float(np.mean(np.abs(err))), me=float(np.mean(err)),
                         voxels=int(err.size), mae_sd=float(np.std(np.abs(err), ddof=ddof)),
                         me_sd=float(np.std(err, ddof=ddof)), model=model, policy=policy, tilespec=tilespec)


def evaluate_case(case_id: str, ct: Volume, sct: Volume, body: np.ndarray, expand: int,
                  model: str = "", policy: str = "", tilespec: str = "") -> List[RegionMetrics]:
    """Body, Bone and Air rows for one case; empty Bone/Air regions are skipped."""
    rows = []
    for spec in (RegionSpec.body(expand), RegionSpec.bone(expand), RegionSpec.air(expand)):
        m = region_mask(ct, body, spec)
        if not (m.values > 0).any():
            if spec.kind == RegionKind.BODY:
                raise EmptyMaskError(f"{case_id}: body region is empty")
            continue
        rows.append(region_metrics(case_id, ct, sct, m, spec.kind, model, policy, tilespec))
    return rows


def constant_predictor_mae(ct: Volume, m: Volume) -> float:
    """MAE of the best single HU value (the region median) standing in for the sCT."""
    inside = m.values > 0
    if not inside.any():
        raise EmptyMaskError("constant predictor needs a nonempty region mask")
    values = ct.values[inside].astype(np.float64)
    return float(np.mean(np.abs(values - np.median(values))))


def drr_raw(v: Volume, view: View) -> np.ndarray:
    """Parallel-ray sums of max(0, HU + 1000) * spacing along the view axis."""
    if v.kind not in _HU_KINDS:
        raise ValueError(f"DRRs are projected from HU volumes, got {v.kind.name}")
    if view == View.AXIAL:
        raise ValueError("DRRs are defined for the sagittal and coronal views")
    attenuation = np.maximum(0.0, v.values.astype(np.float64) + 1000.0) * v.spacing
    return attenuation.sum(axis=view.axis)


def drr(v: Volume, view: View) -> np.ndarray:
    """Projection scaled linearly to [0, 255] by its maximum; all-air stays zero."""
    raw = drr_raw(v, view)
    peak = raw.max()
    return raw / peak * 255.0 if peak > 0 else np.zeros_like(raw)


def write_pgm(path, image: np.ndarray):
    """8-bit binary PGM, one row per v (superior at the top), columns along u."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8).T[::-1]
    height, width = pixels.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels).tobytes())


def report(cases: Iterable[RegionMetrics]) -> pd.DataFrame:
    """Per-case rows, then an ``avg`` and a ``std dev`` row (population std) per group."""
    rows = [c.to_dict() for c in cases]
    if not rows:
        raise ValueError("report needs at least one case")
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    summaries = []
    for keys, group in frame.groupby(_GROUP_KEYS, sort=False):
        numeric = group[['mae_hu', 'me_hu', 'voxels', 'mae_sd_hu', 'me_sd_hu']]
        for label, values in (('avg', numeric.mean()), ('std dev', numeric.std(ddof=0))):
            summaries.append(dict(zip(_GROUP_KEYS, keys), case_id=label, **values.to_dict()))
    return pd.concat([frame, pd.DataFrame(summaries, columns=REPORT_COLUMNS)], ignore_index=True)
