import json
import time
from collections import defaultdict
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd
import torch

from gan.cycle import CycleModel, cycle_step, evaluate_cycle_loss
from gan.model import GanModel
from gan.pix2pix import Pix2PixModel, pix2pix_step
from grid import Volume
from models import (NET_MAX, AugmentParams, EmptyDatasetError, MissingArtifactError, ModelKind,
                    NumericFailureError, TrainConfig, View)
from nncore.checkpoint import load_checkpoint, save_checkpoint
from tiles import augment_slice, epoch_patch_count, training_slices

LOSS_COLUMNS = {
    ModelKind.PIX2PIX: ['d_loss', 'g_adv', 'g_l1'],
    ModelKind.CYCLE: ['d_ct', 'd_mr', 'g_adv_ct', 'g_adv_mr', 'cyc_mr', 'cyc_ct'],
}
VIEW_CODES = {View.AXIAL: 0, View.CORONAL: 1, View.SAGITTAL: 2}
KIND_CODES = {ModelKind.PIX2PIX: 0, ModelKind.CYCLE: 1}
_VALIDATION_STREAM = 99

# validation cuts are plain crops: no warp, no mirroring
PLAIN_CUTS = AugmentParams(rot_deg=(0.0, 0.0), scale=(1.0, 1.0), shear=(1.0, 1.0), cuts_per_slice=1, mirror=False)

Pairs = Sequence[Tuple[Volume, Volume]]


@dataclass
class TrainResult:
    view: View
    kind: ModelKind
    model: GanModel
    log: pd.DataFrame
    patches: int
    seconds: float
    checkpoint: Optional[Path] = None


def checkpoint_path(models_dir, kind: ModelKind, view: View) -> Path:
    return Path(models_dir) / f"{kind.value}_{view.value}.voxw"


def log_path(logs_dir, kind: ModelKind, view: View) -> Path:
    return Path(logs_dir) / f"{kind.value}_{view.value}.csv"


def build_model(kind: ModelKind, config: TrainConfig, seed: Optional[int] = None, dtype=torch.float32) -> GanModel:
    if kind == ModelKind.PIX2PIX:
        return Pix2PixModel(config, seed=seed, dtype=dtype)
    return CycleModel(config, seed=seed, dtype=dtype)


def save_model(model: GanModel, path, view: View, patch: int):
    descriptor = dict(model.descriptor(), view=view.value, patch=patch)
    save_checkpoint(path, descriptor, model.state_dict())


def load_model(path) -> GanModel:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError("checkpoint", path)
    descriptor, tensors = load_checkpoint(path)
    config = TrainConfig(
        epochs=int(descriptor['epochs']),
        seed=int(descriptor['seed']),
        lambda_l1=float(descriptor['lambda_l1']),
        lambda_cyc=float(descriptor['lambda_cyc']),
        lr=float(descriptor['lr']),
        beta1=float(descriptor.get('beta1', TrainConfig.beta1)),
        beta2=float(descriptor.get('beta2', TrainConfig.beta2)),
        base_channels=int(descriptor['base_channels']),
        depth=int(descriptor['depth']),
        dropout=float(descriptor['dropout']),
        val_patches=int(descriptor.get('val_patches', TrainConfig.val_patches)),
    )
    model = build_model(ModelKind(descriptor['kind']), config)
    model.load_state_dict(tensors)
    model.eval()
    return model


def _stream(config: TrainConfig, view: View, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, VIEW_CODES[view], tag]))


def validation_patches(pairs: Pairs, view: View, count: int, patch: int, rng: np.random.Generator):
    """``count`` plain (MR, CT) crops in network units, drawn from non-air slices."""
    slices = training_slices(pairs, view, mirror=False)
    if not slices or count <= 0:
        empty = np.empty((0, patch, patch), dtype=np.float32)
        return empty, empty
    cuts = []
    for index in rng.integers(0, len(slices), size=count):
        mr, ct = slices[int(index)]
        cuts.extend(augment_slice(mr, ct, PLAIN_CUTS, rng, patch))
    return np.stack([c[0] for c in cuts]), np.stack([c[1] for c in cuts])


def validation_loss(model: GanModel, mr: np.ndarray, ct: np.ndarray) -> float:
    """Unit-space L1 of G on the validation crops, or the cycle loss for a cycle model."""
    if len(mr) == 0:
        return float('nan')
    if isinstance(model, CycleModel):
        return evaluate_cycle_loss(model.G_mr2ct.infer, model.G_ct2mr.infer, mr, ct)
    return float(np.mean(np.abs(model.G.infer(mr) - ct)) / (NET_MAX / 2.0))


def _dump_failure(error: NumericFailureError, dump_dir: Path, kind: ModelKind, view: View,
                  epoch: int, step: int, rows: List[dict]) -> NumericFailureError:
    dump_dir.mkdir(parents=True, exist_ok=True)
    path = dump_dir / f"{kind.value}_{view.value}_failure.json"
    with open(path, 'w') as f:
        json.dump({'epoch': epoch, 'step': step, 'record': error.record, 'history': rows}, f, indent=2,
                  default=str)
    click.secho(f"✗ {kind.value}/{view.value}: non-finite loss at epoch {epoch} step {step}", fg='red')
    return NumericFailureError(str(error), record=error.record, dump_path=path)


def train_view(pairs: Pairs, view: View, config: TrainConfig, kind: ModelKind = ModelKind.PIX2PIX,
               augment: AugmentParams = AugmentParams(), patch: int = 32, val_pairs: Optional[Pairs] = None,
               out_dir=None, show_progress: bool = False, dtype=torch.float32) -> TrainResult:
    """Train one model for one view; writes models/ and logs/ under ``out_dir`` when given.

    Every step sees a single augmented patch (batch size one). Cycle models
    pair each MR patch with a CT patch from an independent shuffle.
    """
    torch.use_deterministic_algorithms(True, warn_only=True)
    started = time.perf_counter()
    slices = training_slices(pairs, view, augment.mirror)
    if not slices:
        raise EmptyDatasetError(f"no non-air {view.value} slices to train on")
    planned = epoch_patch_count(len(training_slices(pairs, view, mirror=False)), augment, config.epochs)
    click.secho(f"{kind.value}/{view.value}: {len(slices)} slices, {planned} augmented patches "
                f"over {config.epochs} epochs", fg='cyan')

    rng = _stream(config, view, KIND_CODES[kind])
    model = build_model(kind, config, seed=3 * config.seed + VIEW_CODES[view], dtype=dtype)
    val_mr, val_ct = validation_patches(val_pairs or pairs, view, config.val_patches, patch,
                                        _stream(config, view, _VALIDATION_STREAM))
    columns = LOSS_COLUMNS[kind]
    rows = [dict({'epoch': 0, 'step': 0}, **{c: float('nan') for c in columns},
                 val_loss=validation_loss(model, val_mr, val_ct))]
    dump_dir = Path(out_dir or ".") / "logs"

    step = 0
    epochs = range(1, config.epochs + 1)
    progress = (click.progressbar(epochs, label=f"Training {kind.value}/{view.value}", show_pos=True)
                if show_progress else nullcontext(epochs))
    with progress as bar:
        for epoch in bar:
            cuts = []
            for index in rng.permutation(len(slices)):
                mr_img, ct_img = slices[int(index)]
                cuts.extend(augment_slice(mr_img, ct_img, augment, rng, patch))
            ct_order = rng.permutation(len(cuts)) if kind == ModelKind.CYCLE else None

            totals = defaultdict(float)
            for k, (mr_patch, ct_patch) in enumerate(cuts):
                try:
                    if ct_order is None:
                        record = pix2pix_step(model, (mr_patch, ct_patch))
                    else:
                        record = cycle_step(model, mr_patch, cuts[int(ct_order[k])][1])
                except NumericFailureError as e:
                    raise _dump_failure(e, dump_dir, kind, view, epoch, step, rows) from e
                step += 1
                for name, value in record.items():
                    totals[name] += value
            rows.append(dict({'epoch': epoch, 'step': step}, **{c: totals[c] / len(cuts) for c in columns},
                             val_loss=validation_loss(model, val_mr, val_ct)))

    log = pd.DataFrame(rows, columns=['epoch', 'step'] + columns + ['val_loss'])
    result = TrainResult(view, kind, model, log, planned, time.perf_counter() - started)
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.checkpoint = checkpoint_path(out_dir / "models", kind, view)
        save_model(model, result.checkpoint, view, patch)
        target = log_path(out_dir / "logs", kind, view)
        target.parent.mkdir(parents=True, exist_ok=True)
        log.to_csv(target, index=False)
        click.secho(f"✓ Saved {result.checkpoint} ({result.seconds:.1f}s)", fg='green')
    return result

