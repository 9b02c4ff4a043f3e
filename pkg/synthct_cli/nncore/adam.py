from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import torch

from nncore.layers import Parameter


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[torch.Tensor] = field(default_factory=list)
    v: List[torch.Tensor] = field(default_factory=list)


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState):
    """Bias-corrected Adam update, applied in place. Returns ``params``."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        m.mul_(state.beta1).add_((1.0 - state.beta1) * g)
        v.mul_(state.beta2).add_((1.0 - state.beta2) * g * g)
        p.sub_(state.lr * (m / bc1) / (torch.sqrt(v / bc2) + state.eps))
    return params


class Adam:
    """Adam over a fixed, named parameter set."""

    def __init__(self, parameters: Dict[str, Parameter], lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.parameters = list(parameters.values())
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step([p.data for p in self.parameters], [p.grad for p in self.parameters], self.state)
