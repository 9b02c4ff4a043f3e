"""Conditional GAN: UNet G maps MR to CT, D scores the MR||CT channel pair."""
from typing import Dict, Optional, Tuple

import torch

from gan.model import GanModel, as_batch, check_finite
from models import ModelKind, TrainConfig
from nncore.losses import FAKE, REAL, l1_loss, lsgan_loss
from nncore.networks import DiscriminatorNet, GeneratorNet


class Pix2PixModel(GanModel):
    kind = ModelKind.PIX2PIX

    def __init__(self, config: TrainConfig, seed: Optional[int] = None, dtype=torch.float32):
        seed = config.seed if seed is None else seed
        self.G = GeneratorNet(1, 1, config.base_channels, config.depth, config.dropout, seed=10 * seed + 1, dtype=dtype)
        self.D = DiscriminatorNet(2, config.base_channels, seed=10 * seed + 2, dtype=dtype)
        self.lambda_l1 = config.lambda_l1
        self.dtype = dtype
        super().__init__(config, {'G': self.G, 'D': self.D})

    @property
    def generator(self) -> GeneratorNet:
        return self.G


def discriminator_update(model: Pix2PixModel, mr, ct, fake, step=True) -> float:
    """LSGAN real + fake loss for D; ``fake`` is a plain tensor, cut from G's tape."""
    D = model.D
    D.zero_grad()
    real_score, real_tape = D.forward(torch.cat([mr, ct], dim=1))
    fake_score, fake_tape = D.forward(torch.cat([mr, fake.detach()], dim=1))
    loss_real, grad_real = lsgan_loss(real_score, REAL)
    loss_fake, grad_fake = lsgan_loss(fake_score, FAKE)
    if step:
        D.backward(real_tape, grad_real)
        D.backward(fake_tape, grad_fake)
        model.optimizers['D'].step()
    D.zero_grad()
    return loss_real + loss_fake


def generator_gradients(model: Pix2PixModel, mr, ct, fake, g_tape, lambda_l1=None) -> Tuple[float, float]:
    """Fill G's gradients with d(adv + lambda * L1)/dG; D is read, never stepped."""
    lambda_l1 = model.lambda_l1 if lambda_l1 is None else lambda_l1
    model.G.zero_grad()
    score, d_tape = model.D.forward(torch.cat([mr, fake], dim=1))
    g_adv, grad_score = lsgan_loss(score, REAL)
    grad_pair = model.D.backward(d_tape, grad_score)
    model.D.zero_grad()
    g_l1, grad_l1 = l1_loss(fake, ct)
    model.G.backward(g_tape, grad_pair[:, 1:] + lambda_l1 * grad_l1)
    return g_adv, g_l1


def generator_update(model: Pix2PixModel, mr, ct, fake, g_tape) -> Tuple[float, float]:
    g_adv, g_l1 = generator_gradients(model, mr, ct, fake, g_tape)
    model.optimizers['G'].step()
    return g_adv, g_l1


def pix2pix_step(model: Pix2PixModel, pair, update_d=True) -> Dict[str, float]:
    """One D update then one G update on an aligned (MR, CT) patch pair in [0, 255]."""
    mr, ct = (as_batch(p, model.dtype) for p in pair)
    model.train()
    fake, g_tape = model.G.forward(mr)
    d_loss = discriminator_update(model, mr, ct, fake, step=update_d)
    g_adv, g_l1 = generator_update(model, mr, ct, fake, g_tape)
    record = {'d_loss': d_loss, 'g_adv': g_adv, 'g_l1': g_l1}
    check_finite(record)
    return record
