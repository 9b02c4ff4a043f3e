from typing import Tuple

import numpy as np

from grid import Volume
from models import HU_MAX, HU_MIN, PhantomSpec, TissueClass, VolumeKind

CLASS_HU = {
    TissueClass.EXTERIOR_AIR: -1000.0,
    TissueClass.INTERIOR_AIR: -1000.0,
    TissueClass.SOFT_TISSUE: 40.0,
    TissueClass.BONE: 700.0,
    TissueClass.TUMOR: 60.0,
}

# Bone and interior air both sit near zero: the MR -> CT mapping is not one-to-one.
CLASS_MR = {
    TissueClass.EXTERIOR_AIR: 0.0,
    TissueClass.INTERIOR_AIR: 15.0,
    TissueClass.SOFT_TISSUE: 1200.0,
    TissueClass.BONE: 30.0,
    TissueClass.TUMOR: 1450.0,
}

TUMOR_CORE_MR = 300.0
STREAK_HU = 2500.0

_SHELL_THICKNESS = 0.08
_CAVITY_OFFSET = 0.2
_CAVITY_RADIUS = 0.1
_TUMOR_CENTER = (0.22, 0.0, 0.0)
_TUMOR_RADIUS = 0.1


def _lookup(table, labels: np.ndarray) -> np.ndarray:
    lut = np.zeros(len(TissueClass), dtype=np.float32)
    for tissue, value in table.items():
        lut[tissue.value] = value
    return lut[labels.astype(np.intp)]


def normalized_coords(edge: int, semi_axes) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel-center coordinates scaled so the body ellipsoid is the unit ball."""
    center = (edge - 1) / 2.0
    axes = np.arange(edge, dtype=np.float64) - center
    return tuple(
        (axes / (a * edge)).reshape([-1 if i == k else 1 for k in range(3)])
        for i, a in enumerate(semi_axes))


def shell_radii(n_shells: int):
    """(inner, outer) normalized radii of the bone shells, outermost first."""
    spacing = 0.5 / n_shells
    thickness = min(_SHELL_THICKNESS, 0.6 * spacing)
    return [(0.9 - i * spacing - thickness, 0.9 - i * spacing) for i in range(n_shells)]


def label_map(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    X, Y, Z = normalized_coords(spec.edge, spec.body)
    rho = np.sqrt(X ** 2 + Y ** 2 + Z ** 2)

    labels = np.full((spec.edge,) * 3, TissueClass.EXTERIOR_AIR.value, dtype=np.uint8)
    labels[rho < 1.0] = TissueClass.SOFT_TISSUE.value
    for r_in, r_out in shell_radii(spec.n_bone_shells):
        labels[(rho >= r_in) & (rho < r_out)] = TissueClass.BONE.value

    # cavities sit on the midsagittal plane so the geometry stays left-right symmetric
    for phi in rng.uniform(0.0, 2.0 * np.pi, size=spec.n_air_cavities):
        cy, cz = _CAVITY_OFFSET * np.cos(phi), _CAVITY_OFFSET * np.sin(phi)
        inside = X ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 < _CAVITY_RADIUS ** 2
        labels[inside] = TissueClass.INTERIOR_AIR.value

    if spec.tumor:
        tx, ty, tz = _TUMOR_CENTER
        labels[(X - tx) ** 2 + (Y - ty) ** 2 + (Z - tz) ** 2 < _TUMOR_RADIUS ** 2] = TissueClass.TUMOR.value
    return labels


def bias_field(dims, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth multiplicative low-frequency field around 1."""
    X, Y, Z = (np.linspace(-1.0, 1.0, n).reshape([-1 if i == k else 1 for k in range(3)])
               for i, n in enumerate(dims))
    a, b, c, d = rng.uniform(-1.0, 1.0, size=4)
    field = a * X + b * Y + c * Z + d * X * Y * Z
    return (1.0 + strength * field / max(1.0, np.abs(field).max())).astype(np.float32)


def apply_bias_field(mr: Volume, seed: int, strength: float = 0.25) -> Volume:
    """Multiply an MR volume by a seeded bias field, the uncorrected-scan stand-in."""
    field = bias_field(mr.dims, strength, np.random.default_rng(seed))
    return mr.replace(mr.values * field)


def generate_pair(spec: PhantomSpec) -> Tuple[Volume, Volume, Volume]:
    """Build an aligned (mr, ct, labels) triple, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    labels = label_map(spec, rng)
    body = labels != TissueClass.EXTERIOR_AIR.value

    ct = _lookup(CLASS_HU, labels)
    mr = _lookup(CLASS_MR, labels)

    if spec.tumor:
        X, Y, Z = normalized_coords(spec.edge, spec.body)
        tx, ty, tz = _TUMOR_CENTER
        core = (X - tx) ** 2 + (Y - ty) ** 2 + (Z - tz) ** 2 < (_TUMOR_RADIUS / 2) ** 2
        mr[core] = TUMOR_CORE_MR

    if spec.artifact:
        mr *= bias_field(labels.shape, 0.25, rng)
        # metal-like streak through the body along x, with a signal void around it in MR
        center = spec.edge // 2
        y0, z0 = center, center + spec.edge // 6
        streak = np.zeros_like(body)
        streak[:, y0, z0] = True
        ct[streak & body] = STREAK_HU

    ct[body] += rng.normal(0.0, spec.noise_sigma, size=int(body.sum())).astype(np.float32)
    mr[body] += rng.normal(0.0, spec.noise_sigma, size=int(body.sum())).astype(np.float32)
    np.clip(ct, HU_MIN, HU_MAX, out=ct)
    np.maximum(mr, 0.0, out=mr)
    if spec.artifact:
        void = np.zeros_like(body)
        void[:, y0 - 1:y0 + 2, z0 - 1:z0 + 2] = True
        mr[void & body] = 0.0

    return (Volume(mr, spec.spacing, VolumeKind.MR_LIKE),
            Volume(ct, spec.spacing, VolumeKind.CT_LIKE),
            Volume(labels, spec.spacing, VolumeKind.LABEL))


def oracle_translate(labels: Volume) -> Volume:
    """Noise-free CT straight from the class map."""
    if labels.kind != VolumeKind.LABEL:
        raise ValueError(f"oracle translation needs a LABEL volume, got {labels.kind.name}")
    return Volume(class_to_hu(labels.values), labels.spacing, VolumeKind.CT_LIKE)


def class_to_hu(labels: np.ndarray) -> np.ndarray:
    return _lookup(CLASS_HU, labels)
