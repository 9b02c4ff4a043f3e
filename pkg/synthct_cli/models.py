import os
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

CODE_VERSION = "0.3.0"

HU_MIN = -1000.0
HU_MAX = 3071.0
NET_MAX = 255.0


def debug_enabled() -> bool:
    return os.environ.get("SYNTHCT_DEBUG", "0") not in ("", "0", "false")


class SynthCTError(Exception):
    exit_code = 1


class ConfigError(SynthCTError):
    exit_code = 2


class MissingArtifactError(SynthCTError):
    exit_code = 3

    def __init__(self, what, path):
        super().__init__(f"Missing {what}: expected {path}")
        self.path = path


class VolumeFormatError(SynthCTError):
    exit_code = 3


class NumericFailureError(SynthCTError):
    exit_code = 4

    def __init__(self, message, record=None, dump_path=None):
        if dump_path is not None:
            message = f"{message} (diagnostic dump: {dump_path})"
        super().__init__(message)
        self.record = record or {}
        self.dump_path = dump_path


class EmptyMaskError(SynthCTError, ValueError):
    exit_code = 4


class ShapeMismatchError(SynthCTError, ValueError):
    exit_code = 2


class EmptyDatasetError(SynthCTError, ValueError):
    exit_code = 2


class VolumeKind(Enum):
    MR_LIKE = 0
    CT_LIKE = 1
    SYNTHETIC = 2
    LABEL = 3
    MASK = 4


class View(Enum):
    """Slicing views. In-plane image axes are (u, v) as documented in grid.slice_volume."""
    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"

    @property
    def axis(self) -> int:
        # volumes are indexed [x, y, z]
        return {View.SAGITTAL: 0, View.CORONAL: 1, View.AXIAL: 2}[self]


class TissueClass(Enum):
    EXTERIOR_AIR = 0
    INTERIOR_AIR = 1
    SOFT_TISSUE = 2
    BONE = 3
    TUMOR = 4


class ModelKind(Enum):
    PIX2PIX = "pix2pix"
    CYCLE = "cycle"


class FusionMethod(Enum):
    AVERAGE = "average"
    MEDIAN = "median"
    VOTE = "vote"


class ClipKind(Enum):
    DYNAMIC_PERCENTILE = "dynamic"
    STATIC = "static"


class RegionKind(Enum):
    BODY = "body"
    BONE = "bone"
    AIR = "air"


@dataclass(frozen=True)
class TileSpec:
    patch: int = 32
    stride: int = 32
    crop: int = 0

    def __post_init__(self):
        if self.patch <= 0:
            raise ConfigError(f"patch must be positive, got {self.patch}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.crop < 0 or 2 * self.crop >= self.patch:
            raise ConfigError(f"crop must satisfy 0 <= 2c < P, got c={self.crop} P={self.patch}")
        if self.stride > self.patch - 2 * self.crop:
            raise ConfigError(
                f"stride {self.stride} leaves gaps: must be <= P - 2c = {self.patch - 2 * self.crop}")

    @property
    def label(self) -> str:
        return f"s{self.stride}c{self.crop}"

    def scaled_label(self, full_patch: int = 128) -> str:
        """The same geometry expressed at a full-scale patch size."""
        ratio = full_patch / self.patch
        return f"s{round(self.stride * ratio)}c{round(self.crop * ratio)}"


@dataclass(frozen=True)
class AugmentParams:
    rot_deg: Tuple[float, float] = (-3.5, 3.5)
    scale: Tuple[float, float] = (0.9, 1.1)
    shear: Tuple[float, float] = (0.97, 1.03)
    cuts_per_slice: int = 5
    max_tries: int = 100
    mirror: bool = True

    def __post_init__(self):
        for name in ("rot_deg", "scale", "shear"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"augment.{name} range is inverted: [{lo}, {hi}]")
        if self.cuts_per_slice < 1:
            raise ConfigError("augment.cuts_per_slice must be >= 1")
        if self.max_tries < 1:
            raise ConfigError("augment.max_tries must be >= 1")


@dataclass(frozen=True)
class ClipPolicy:
    kind: ClipKind = ClipKind.STATIC
    value: float = 2500.0

    def __post_init__(self):
        if self.kind == ClipKind.DYNAMIC_PERCENTILE and not 0 < self.value < 100:
            raise ConfigError(f"percentile must be in (0, 100), got {self.value}")
        if self.kind == ClipKind.STATIC and self.value <= 0:
            raise ConfigError(f"static clip value must be positive, got {self.value}")

    @classmethod
    def dynamic(cls, percentile: float = 99.0) -> "ClipPolicy":
        return cls(ClipKind.DYNAMIC_PERCENTILE, percentile)

    @classmethod
    def static(cls, value: float = 2500.0) -> "ClipPolicy":
        return cls(ClipKind.STATIC, value)

    @property
    def label(self) -> str:
        if self.kind == ClipKind.STATIC:
            return f"static{self.value:g}"
        return f"dynamic_p{self.value:g}"


# HU class bands used by vote fusion: [-1000, -200), [-200, 200), [200, 3071]
VOTE_BOUNDS = (-200.0, 200.0)


@dataclass(frozen=True)
class FusionPolicy:
    method: FusionMethod = FusionMethod.AVERAGE
    majority_frac: float = 0.65
    minority_frac: float = 0.65

    def __post_init__(self):
        for name in ("majority_frac", "minority_frac"):
            value = getattr(self, name)
            if not 0.5 < value <= 1.0:
                raise ConfigError(f"fusion.{name} must be in (0.5, 1], got {value}")

    @property
    def label(self) -> str:
        return self.method.value


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    edge: int = 64
    spacing: float = 4.0
    body: Tuple[float, float, float] = (0.40, 0.36, 0.44)
    n_bone_shells: int = 1
    n_air_cavities: int = 2
    tumor: bool = False
    artifact: bool = False
    noise_sigma: float = 20.0

    def __post_init__(self):
        if any(not 0 < a <= 0.5 for a in self.body):
            raise ConfigError(f"body semi-axes must lie in (0, 0.5], got {self.body}")
        if self.n_bone_shells < 1:
            raise ConfigError("n_bone_shells must be >= 1")
        if self.n_air_cavities < 0:
            raise ConfigError("n_air_cavities must be >= 0")
        if self.edge < 8 or self.spacing <= 0 or self.noise_sigma < 0:
            raise ConfigError(f"invalid phantom geometry: edge={self.edge} spacing={self.spacing}")

    def to_dict(self) -> Dict[str, object]:
        return {
            'seed': self.seed,
            'edge': self.edge,
            'spacing': self.spacing,
            'body': ",".join(f"{a:g}" for a in self.body),
            'n_bone_shells': self.n_bone_shells,
            'n_air_cavities': self.n_air_cavities,
            'tumor': self.tumor,
            'artifact': self.artifact,
            'noise_sigma': self.noise_sigma,
        }


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 1
    seed: int = 0
    lambda_l1: float = 100.0
    lambda_cyc: float = 10.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    base_channels: int = 32
    depth: int = 3
    dropout: float = 0.5
    views: Tuple[View, ...] = (View.AXIAL, View.CORONAL, View.SAGITTAL)
    val_patches: int = 64

    def __post_init__(self):
        if self.batch_size != 1:
            raise ConfigError("training runs with a batch size of one")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if not self.views:
            raise ConfigError("train.views must name at least one view")


@dataclass(frozen=True)
class RegionSpec:
    kind: RegionKind
    expand: int = 4
    threshold: Optional[float] = None

    @classmethod
    def body(cls, expand: int = 4) -> "RegionSpec":
        return cls(RegionKind.BODY, expand)

    @classmethod
    def bone(cls, expand: int = 4, threshold: float = 200.0) -> "RegionSpec":
        return cls(RegionKind.BONE, expand, threshold)

    @classmethod
    def air(cls, expand: int = 4, threshold: float = -300.0) -> "RegionSpec":
        return cls(RegionKind.AIR, expand, threshold)


@dataclass
class RegionMetrics:
    case_id: str
    region: RegionKind
    mae: float
    me: float
    voxels: int
    mae_sd: float = 0.0
    me_sd: float = 0.0
    model: str = ""
    policy: str = ""
    tilespec: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {
            'case_id': self.case_id,
            'model': self.model,
            'policy': self.policy,
            'tilespec': self.tilespec,
            'region': self.region.value,
            'mae_hu': self.mae,
            'me_hu': self.me,
            'voxels': self.voxels,
            'mae_sd_hu': self.mae_sd,
            'me_sd_hu': self.me_sd,
        }
