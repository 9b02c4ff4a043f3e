"""UNet generator and five-level convolutional discriminator.

Both nets work in unit space [-1, 1]; ``to_unit``/``from_unit`` convert from
and to the [0, 255] network range used by the rest of the pipeline.
"""
from typing import Dict, List, Tuple

import numpy as np
import torch

from models import NET_MAX, ShapeMismatchError
from nncore.layers import (BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, Layer, LeakyReLU, Parameter, ReLU,
                           Tanh, check_tensor4)

Stage = List[Tuple[str, Layer]]


def to_unit(x):
    return x / (NET_MAX / 2.0) - 1.0


def from_unit(y):
    return (y + 1.0) * (NET_MAX / 2.0)


def _run(stage: Stage, x):
    ctxs = []
    for _, layer in stage:
        x, ctx = layer.forward(x)
        ctxs.append(ctx)
    return x, ctxs


def _unrun(stage: Stage, ctxs, grad):
    for (_, layer), ctx in zip(reversed(stage), reversed(ctxs)):
        grad = layer.backward(ctx, grad)
    return grad


class Network:
    """Named stages of layers with parameter bookkeeping shared by G and D."""

    def __init__(self):
        self.stages: Dict[str, Stage] = {}

    def layers(self):
        for stage_name, stage in self.stages.items():
            for layer_name, layer in stage:
                yield f"{stage_name}.{layer_name}", layer

    def named_parameters(self) -> Dict[str, Parameter]:
        return {f"{prefix}.{name}": p for prefix, layer in self.layers() for name, p in layer.parameters().items()}

    def named_buffers(self) -> Dict[str, torch.Tensor]:
        return {f"{prefix}.{name}": b for prefix, layer in self.layers() for name, b in layer.buffers().items()}

    def parameter_count(self) -> int:
        return sum(p.data.numel() for p in self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def train(self):
        for _, layer in self.layers():
            layer.training = True
        return self

    def eval(self):
        for _, layer in self.layers():
            layer.training = False
        return self

    def state_dict(self) -> Dict[str, torch.Tensor]:
        state = {name: p.data.clone() for name, p in self.named_parameters().items()}
        state.update({name: b.clone() for name, b in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, torch.Tensor]):
        targets = {name: p.data for name, p in self.named_parameters().items()}
        targets.update(self.named_buffers())
        missing = sorted(set(targets) - set(state))
        if missing:
            raise KeyError(f"state is missing tensors: {', '.join(missing)}")
        for name, target in targets.items():
            source = state[name]
            if tuple(source.shape) != tuple(target.shape):
                raise ShapeMismatchError(f"{name}: stored shape {tuple(source.shape)} != {tuple(target.shape)}")
            target.copy_(source.to(target.dtype))


class GeneratorNet(Network):
    """UNet: ``depth`` stride-2 conv stages down, the same number of transposed convs up.

    The outermost encoder stage has no batch norm. Decoder stages run
    tconv, batch norm, dropout, ReLU and then concatenate the matching skip.
    The head transposed conv ends in tanh.
    """

    def __init__(self, in_channels=1, out_channels=1, base_channels=32, depth=3, dropout=0.5,
                 seed=0, dtype=torch.float32):
        super().__init__()
        if depth < 2:
            raise ValueError(f"UNet depth must be >= 2, got {depth}")
        self.in_channels, self.out_channels, self.depth = in_channels, out_channels, depth
        init = torch.Generator().manual_seed(seed)
        self.noise = torch.Generator().manual_seed(seed + 1)
        widths = [base_channels * 2 ** min(i, 3) for i in range(depth)]
        self.widths = widths

        previous = in_channels
        for i, width in enumerate(widths):
            stage = [('conv', Conv2d(previous, width, generator=init, dtype=dtype))]
            if i > 0:
                stage.append(('bn', BatchNorm2d(width, generator=init, dtype=dtype)))
            stage.append(('act', LeakyReLU(0.2)))
            self.stages[f"enc{i}"] = stage
            previous = width

        # decoder j upsamples to the resolution of encoder stage depth-2-j
        for j in range(depth - 1):
            width = widths[depth - 2 - j]
            self.stages[f"dec{j}"] = [
                ('tconv', ConvTranspose2d(previous, width, generator=init, dtype=dtype)),
                ('bn', BatchNorm2d(width, generator=init, dtype=dtype)),
                ('drop', Dropout(dropout, generator=self.noise)),
                ('act', ReLU()),
            ]
            previous = 2 * width
        self.stages['head'] = [
            ('tconv', ConvTranspose2d(previous, out_channels, generator=init, dtype=dtype)),
            ('act', Tanh()),
        ]

    def forward(self, x):
        check_tensor4(x, self.in_channels, "generator input")
        factor = 2 ** self.depth
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ShapeMismatchError(f"generator input {tuple(x.shape[2:])} must be divisible by {factor}")
        tape, skips = [], []
        h = x
        for i in range(self.depth):
            h, ctxs = _run(self.stages[f"enc{i}"], h)
            tape.append(ctxs)
            skips.append(h)
        for j in range(self.depth - 1):
            h, ctxs = _run(self.stages[f"dec{j}"], h)
            tape.append(ctxs)
            h = torch.cat([h, skips[self.depth - 2 - j]], dim=1)
        h, ctxs = _run(self.stages['head'], h)
        tape.append(ctxs)
        return h, tape

    def backward(self, tape, grad):
        grad = _unrun(self.stages['head'], tape[-1], grad)
        skip_grads = [None] * self.depth
        for j in reversed(range(self.depth - 1)):
            width = self.widths[self.depth - 2 - j]
            skip_grads[self.depth - 2 - j] = grad[:, width:]
            grad = _unrun(self.stages[f"dec{j}"], tape[self.depth + j], grad[:, :width])
        for i in reversed(range(self.depth)):
            if skip_grads[i] is not None:
                grad = grad + skip_grads[i]
            grad = _unrun(self.stages[f"enc{i}"], tape[i], grad)
        return grad

    def infer(self, patches: np.ndarray) -> np.ndarray:
        """Translate a (N, P, P) batch of [0, 255] patches; dropout and batch stats are off."""
        self.eval()
        dtype = self.stages['head'][0][1].weight.data.dtype
        x = torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32)).to(dtype)[:, None]
        with torch.no_grad():
            y, _ = self.forward(to_unit(x))
        return np.clip(from_unit(y[:, 0]).to(torch.float32).numpy(), 0.0, NET_MAX)


class DiscriminatorNet(Network):
    """Five k4/s2 convolutions: 32x32 in, one realness score out."""

    def __init__(self, in_channels=1, base_channels=32, n_layers=5, seed=0, dtype=torch.float32):
        super().__init__()
        self.in_channels = in_channels
        init = torch.Generator().manual_seed(seed)
        previous = in_channels
        for k in range(n_layers):
            last = k == n_layers - 1
            width = 1 if last else base_channels * 2 ** min(k, 2)
            stage = [('conv', Conv2d(previous, width, generator=init, dtype=dtype))]
            if not last:
                stage.append(('act', LeakyReLU(0.2)))
            self.stages[f"conv{k}"] = stage
            previous = width

    def forward(self, x):
        check_tensor4(x, self.in_channels, "discriminator input")
        tape = []
        for stage in self.stages.values():
            x, ctxs = _run(stage, x)
            tape.append(ctxs)
        return x, tape

    def backward(self, tape, grad):
        for stage, ctxs in zip(reversed(list(self.stages.values())), reversed(tape)):
            grad = _unrun(stage, ctxs, grad)
        return grad
