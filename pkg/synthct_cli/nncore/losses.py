from typing import Tuple

import torch

from models import ShapeMismatchError

REAL = 1.0
FAKE = 0.0


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> Tuple[float, torch.Tensor]:
    """Mean absolute difference and its subgradient with respect to ``a`` (0 at ties)."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"l1_loss operands differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = a - b
    return float(diff.abs().mean()), torch.sign(diff) / diff.numel()


def lsgan_loss(score: torch.Tensor, target: float) -> Tuple[float, torch.Tensor]:
    """Least-squares adversarial loss against a constant real (1) or fake (0) label."""
    diff = score - target
    return float((diff * diff).mean()), 2.0 * diff / diff.numel()
