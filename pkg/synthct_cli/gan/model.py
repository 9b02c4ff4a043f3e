import hashlib
import math
from typing import Dict

import numpy as np
import torch

from models import CODE_VERSION, ModelKind, NumericFailureError, TrainConfig
from nncore.adam import Adam
from nncore.networks import Network, to_unit


def as_batch(patch, dtype=torch.float32) -> torch.Tensor:
    """A (P, P) patch in [0, 255] as a (1, 1, P, P) unit-space tensor."""
    x = torch.from_numpy(np.ascontiguousarray(patch, dtype=np.float32)).to(dtype)
    return to_unit(x)[None, None]


def check_finite(record: Dict[str, float]):
    bad = [name for name, value in record.items() if not math.isfinite(value)]
    if bad:
        raise NumericFailureError(f"non-finite loss terms: {', '.join(bad)}", record=record)


class GanModel:
    """Named nets plus their optimizers; checkpoints prefix tensors with the net name."""

    kind: ModelKind

    def __init__(self, config: TrainConfig, nets: Dict[str, Network]):
        self.config = config
        self.nets = nets
        self.optimizers = {
            name: Adam(net.named_parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
            for name, net in nets.items()
        }

    def train(self):
        for net in self.nets.values():
            net.train()

    def eval(self):
        for net in self.nets.values():
            net.eval()

    def state_dict(self) -> Dict[str, torch.Tensor]:
        return {f"{prefix}.{name}": tensor
                for prefix, net in self.nets.items() for name, tensor in net.state_dict().items()}

    def load_state_dict(self, state: Dict[str, torch.Tensor]):
        grouped = {prefix: {} for prefix in self.nets}
        for key, tensor in state.items():
            prefix, _, name = key.partition(".")
            if prefix not in grouped:
                raise KeyError(f"checkpoint tensor {key} belongs to no net of a {self.kind.value} model")
            grouped[prefix][name] = tensor
        for prefix, net in self.nets.items():
            net.load_state_dict(grouped[prefix])

    def parameter_hashes(self) -> Dict[str, str]:
        hashes = {}
        for prefix, net in self.nets.items():
            digest = hashlib.sha256()
            for p in net.named_parameters().values():
                digest.update(p.data.detach().cpu().numpy().tobytes())
            hashes[prefix] = digest.hexdigest()
        return hashes

    def descriptor(self) -> Dict[str, object]:
        c = self.config
        return {
            'kind': self.kind.value,
            'nets': ",".join(self.nets),
            'base_channels': c.base_channels,
            'depth': c.depth,
            'dropout': c.dropout,
            'seed': c.seed,
            'epochs': c.epochs,
            'lambda_l1': c.lambda_l1,
            'lambda_cyc': c.lambda_cyc,
            'lr': c.lr,
            'beta1': c.beta1,
            'beta2': c.beta2,
            'val_patches': c.val_patches,
            'code_version': CODE_VERSION,
        }
