"""Flat ``key = value`` run configuration with dotted section keys."""
import hashlib
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from models import (AugmentParams, ClipPolicy, ConfigError, FusionMethod, FusionPolicy, PhantomSpec, TileSpec,
                    TrainConfig, View)

MAX_SPLIT_CASES = 100


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _names(text: str) -> Tuple[str, ...]:
    return tuple(part.strip().lower() for part in text.split(",") if part.strip())


# key -> (parser, default); defaults are the desk-scale values
SCHEMA: Dict[str, Tuple[Callable[[str], object], object]] = {
    'seed': (int, 0),
    'out': (str, "runs/desk"),
    'jobs': (int, 1),
    'phantom.edge': (int, 64),
    'phantom.spacing': (float, 4.0),
    'phantom.noise_sigma': (float, 20.0),
    'phantom.train': (int, 6),
    'phantom.val': (int, 1),
    'phantom.test': (int, 2),
    'phantom.abnormal_test': (int, 1),
    'phantom.bone_shells': (int, 1),
    'phantom.air_cavities': (int, 2),
    'phantom.body': (_floats, (0.40, 0.36, 0.44)),
    'prep.mask_dilate': (int, 3),
    'clip.policy': (str, "static"),
    'clip.value': (float, 2500.0),
    'clip.percentile': (float, 99.0),
    'tiles.patch': (int, 32),
    'tiles.stride': (int, 8),
    'tiles.crop': (int, 4),
    'augment.rot_deg': (float, 3.5),
    'augment.scale_min': (float, 0.9),
    'augment.scale_max': (float, 1.1),
    'augment.shear_min': (float, 0.97),
    'augment.shear_max': (float, 1.03),
    'augment.cuts_per_slice': (int, 5),
    'augment.max_tries': (int, 100),
    'augment.mirror': (_bool, True),
    'train.epochs': (int, 30),
    'train.lr': (float, 2e-4),
    'train.beta1': (float, 0.5),
    'train.beta2': (float, 0.999),
    'train.lambda_l1': (float, 100.0),
    'train.lambda_cyc': (float, 10.0),
    'train.base_channels': (int, 32),
    'train.depth': (int, 3),
    'train.dropout': (float, 0.5),
    'train.views': (_names, ("axial", "coronal", "sagittal")),
    'train.val_patches': (int, 64),
    'fusion.policies': (_names, ("average", "median", "vote")),
    'fusion.majority_frac': (float, 0.65),
    'fusion.minority_frac': (float, 0.65),
    'fusion.fill': (float, -1000.0),
    'metrics.expand_limit_mm': (float, 5.0),
}


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    return values


class RunConfig:

    def __init__(self, values: Optional[Dict[str, object]] = None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        self.values.update(values or {})
        self._validate()

    @classmethod
    def load(cls, path=None, seed: Optional[int] = None, jobs: Optional[int] = None,
             out: Optional[str] = None) -> "RunConfig":
        values = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            values = parse_config_text(path.read_text(), str(path))
        for key, override in (('seed', seed), ('jobs', jobs), ('out', out)):
            if override is not None:
                values[key] = override
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def _validate(self):
        if self['jobs'] < 1:
            raise ConfigError("jobs must be >= 1")
        for split in ('train', 'val', 'test', 'abnormal_test'):
            count = self[f'phantom.{split}']
            if not 0 <= count <= MAX_SPLIT_CASES:
                raise ConfigError(f"phantom.{split} must be in [0, {MAX_SPLIT_CASES}], got {count}")
        if self['phantom.train'] < 1:
            raise ConfigError("phantom.train must be >= 1")
        if self['clip.policy'] not in ("static", "dynamic"):
            raise ConfigError(f"clip.policy must be static or dynamic, got {self['clip.policy']!r}")
        if len(self['phantom.body']) != 3:
            raise ConfigError("phantom.body needs three semi-axes")
        if self['prep.mask_dilate'] < 0:
            raise ConfigError("prep.mask_dilate must be >= 0")
        # building each derived object runs its own validation
        self.tile_spec()
        self.augment_params()
        self.clip_policy()
        self.train_config()
        self.fusion_policies()
        self.phantom_splits()

    @property
    def out_dir(self) -> Path:
        return Path(self['out'])

    def canonical_text(self) -> str:
        return "".join(f"{key}={_render(self.values[key])}\n" for key in sorted(self.values))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def tile_spec(self) -> TileSpec:
        return TileSpec(self['tiles.patch'], self['tiles.stride'], self['tiles.crop'])

    def augment_params(self) -> AugmentParams:
        rot = self['augment.rot_deg']
        return AugmentParams(rot_deg=(-rot, rot),
                             scale=(self['augment.scale_min'], self['augment.scale_max']),
                             shear=(self['augment.shear_min'], self['augment.shear_max']),
                             cuts_per_slice=self['augment.cuts_per_slice'],
                             max_tries=self['augment.max_tries'],
                             mirror=self['augment.mirror'])

    def clip_policy(self) -> ClipPolicy:
        if self['clip.policy'] == "dynamic":
            return ClipPolicy.dynamic(self['clip.percentile'])
        return ClipPolicy.static(self['clip.value'])

    def views(self) -> Tuple[View, ...]:
        try:
            return tuple(View(name) for name in self['train.views'])
        except ValueError as e:
            raise ConfigError(f"train.views: {e}") from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self['train.epochs'], seed=self['seed'],
                           lambda_l1=self['train.lambda_l1'], lambda_cyc=self['train.lambda_cyc'],
                           lr=self['train.lr'], beta1=self['train.beta1'], beta2=self['train.beta2'],
                           base_channels=self['train.base_channels'], depth=self['train.depth'],
                           dropout=self['train.dropout'], views=self.views(),
                           val_patches=self['train.val_patches'])

    def fusion_policies(self) -> List[FusionPolicy]:
        try:
            methods = [FusionMethod(name) for name in self['fusion.policies']]
        except ValueError as e:
            raise ConfigError(f"fusion.policies: {e}") from None
        if not methods:
            raise ConfigError("fusion.policies must name at least one policy")
        return [FusionPolicy(m, self['fusion.majority_frac'], self['fusion.minority_frac']) for m in methods]

    def _phantom(self, seed: int, abnormal: bool = False) -> PhantomSpec:
        return PhantomSpec(seed=seed, edge=self['phantom.edge'], spacing=self['phantom.spacing'],
                           body=tuple(self['phantom.body']), n_bone_shells=self['phantom.bone_shells'],
                           n_air_cavities=self['phantom.air_cavities'], tumor=abnormal, artifact=abnormal,
                           noise_sigma=self['phantom.noise_sigma'])

    def phantom_splits(self) -> Dict[str, List[Tuple[str, PhantomSpec]]]:
        """Case ids and specs per split; seed blocks of 100 keep the splits disjoint."""
        base = 1000 * self['seed']
        test = [(f"test{i:02d}", self._phantom(base + 200 + i)) for i in range(self['phantom.test'])]
        test += [(f"abnormal{i:02d}", self._phantom(base + 300 + i, abnormal=True))
                 for i in range(self['phantom.abnormal_test'])]
        return {
            'train': [(f"train{i:02d}", self._phantom(base + i)) for i in range(self['phantom.train'])],
            'val': [(f"val{i:02d}", self._phantom(base + 100 + i)) for i in range(self['phantom.val'])],
            'test': test,
        }
