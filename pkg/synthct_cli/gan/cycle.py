"""Unpaired translation with two generators, two discriminators and cycle L1 terms.

The two cycles are MR -> sCT1 -> sMR1 and CT -> sMR2 -> sCT2. There is no
identity-mapping term.
"""
from typing import Callable, Dict, Optional

import numpy as np
import torch

from gan.model import GanModel, as_batch, check_finite
from models import ModelKind, TrainConfig
from nncore.losses import FAKE, REAL, l1_loss, lsgan_loss
from nncore.networks import DiscriminatorNet, GeneratorNet, to_unit


class CycleModel(GanModel):
    kind = ModelKind.CYCLE

    def __init__(self, config: TrainConfig, seed: Optional[int] = None, dtype=torch.float32):
        seed = config.seed if seed is None else seed
        unet = dict(base_channels=config.base_channels, depth=config.depth, dropout=config.dropout, dtype=dtype)
        self.G_mr2ct = GeneratorNet(1, 1, seed=10 * seed + 1, **unet)
        self.G_ct2mr = GeneratorNet(1, 1, seed=10 * seed + 3, **unet)
        self.D_ct = DiscriminatorNet(1, config.base_channels, seed=10 * seed + 2, dtype=dtype)
        self.D_mr = DiscriminatorNet(1, config.base_channels, seed=10 * seed + 4, dtype=dtype)
        self.lambda_cyc = config.lambda_cyc
        self.dtype = dtype
        super().__init__(config, {'G_mr2ct': self.G_mr2ct, 'G_ct2mr': self.G_ct2mr,
                                  'D_ct': self.D_ct, 'D_mr': self.D_mr})

    @property
    def generator(self) -> GeneratorNet:
        return self.G_mr2ct


def _discriminator_update(model: CycleModel, name: str, real, fake, step=True) -> float:
    D = model.nets[name]
    D.zero_grad()
    real_score, real_tape = D.forward(real)
    fake_score, fake_tape = D.forward(fake.detach())
    loss_real, grad_real = lsgan_loss(real_score, REAL)
    loss_fake, grad_fake = lsgan_loss(fake_score, FAKE)
    if step:
        D.backward(real_tape, grad_real)
        D.backward(fake_tape, grad_fake)
        model.optimizers[name].step()
    D.zero_grad()
    return loss_real + loss_fake


def _fool(model: CycleModel, name: str, fake):
    D = model.nets[name]
    score, tape = D.forward(fake)
    loss, grad_score = lsgan_loss(score, REAL)
    grad = D.backward(tape, grad_score)
    D.zero_grad()
    return loss, grad


def cycle_step(model: CycleModel, mr_patch, ct_patch, update_d=True) -> Dict[str, float]:
    """One step on an MR patch and an unrelated CT patch, both in [0, 255]."""
    mr, ct = as_batch(mr_patch, model.dtype), as_batch(ct_patch, model.dtype)
    model.train()
    sct1, tape_a = model.G_mr2ct.forward(mr)
    smr1, tape_b = model.G_ct2mr.forward(sct1)
    smr2, tape_c = model.G_ct2mr.forward(ct)
    sct2, tape_d = model.G_mr2ct.forward(smr2)

    d_ct = _discriminator_update(model, 'D_ct', ct, sct1, step=update_d)
    d_mr = _discriminator_update(model, 'D_mr', mr, smr2, step=update_d)

    model.G_mr2ct.zero_grad()
    model.G_ct2mr.zero_grad()
    adv_ct, grad_sct1 = _fool(model, 'D_ct', sct1)
    adv_mr, grad_smr2 = _fool(model, 'D_mr', smr2)
    cyc_mr, grad_smr1 = l1_loss(smr1, mr)
    cyc_ct, grad_sct2 = l1_loss(sct2, ct)

    # backward in reverse dependency order: B, D, then A, C
    grad_sct1 = grad_sct1 + model.G_ct2mr.backward(tape_b, model.lambda_cyc * grad_smr1)
    grad_smr2 = grad_smr2 + model.G_mr2ct.backward(tape_d, model.lambda_cyc * grad_sct2)
    model.G_mr2ct.backward(tape_a, grad_sct1)
    model.G_ct2mr.backward(tape_c, grad_smr2)
    model.optimizers['G_mr2ct'].step()
    model.optimizers['G_ct2mr'].step()

    record = {'d_ct': d_ct, 'd_mr': d_mr, 'g_adv_ct': adv_ct, 'g_adv_mr': adv_mr,
              'cyc_mr': cyc_mr, 'cyc_ct': cyc_ct}
    check_finite(record)
    return record


PatchMap = Callable[[np.ndarray], np.ndarray]


def evaluate_cycle_loss(mr2ct: PatchMap, ct2mr: PatchMap, mr_patches: np.ndarray, ct_patches: np.ndarray) -> float:
    """Mean L1(MR, sMR1) + L1(CT, sCT2) in unit space over (N, P, P) batches.

    ``mr2ct``/``ct2mr`` map [0, 255] batches to [0, 255] batches, so plain
    callables (e.g. identities) can stand in for trained generators.
    """
    mr = np.asarray(mr_patches, dtype=np.float64)
    ct = np.asarray(ct_patches, dtype=np.float64)
    smr1 = np.asarray(ct2mr(mr2ct(mr)), dtype=np.float64)
    sct2 = np.asarray(mr2ct(ct2mr(ct)), dtype=np.float64)
    return float(np.mean(np.abs(to_unit(smr1) - to_unit(mr))) + np.mean(np.abs(to_unit(sct2) - to_unit(ct))))
