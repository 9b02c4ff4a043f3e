"""VOXW1 checkpoint files.

Layout, all integers u32 little-endian::

    b"VOXW1"
    descriptor length, descriptor text (UTF-8 ``key=value`` lines, sorted)
    blob count
    per blob: name length, name, rank, rank dims, f32 LE payload (C order)
"""
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
import torch

from models import VolumeFormatError

WEIGHTS_MAGIC = b"VOXW1"
_U32 = struct.Struct("<I")


def render_descriptor(descriptor: Dict[str, object]) -> str:
    return "".join(f"{key}={descriptor[key]}\n" for key in sorted(descriptor))


def parse_descriptor(text: str) -> Dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            out[key] = value
    return out


def save_checkpoint(path: Union[str, Path], descriptor: Dict[str, object], tensors: Dict[str, torch.Tensor]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = render_descriptor(descriptor).encode("utf-8")
    chunks = [WEIGHTS_MAGIC, _U32.pack(len(text)), text, _U32.pack(len(tensors))]
    for name, tensor in tensors.items():
        encoded = name.encode("utf-8")
        array = tensor.detach().to(torch.float32).cpu().numpy()
        chunks += [_U32.pack(len(encoded)), encoded, _U32.pack(array.ndim)]
        chunks += [_U32.pack(n) for n in array.shape]
        chunks.append(array.astype("<f4").tobytes(order="C"))
    with open(path, 'wb') as f:
        f.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.path, self.pos = blob, path, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise VolumeFormatError(f"{self.path}: truncated {what}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(_U32.size, what))[0]


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, str], Dict[str, torch.Tensor]]:
    with open(path, 'rb') as f:
        reader = _Reader(f.read(), path)
    if reader.take(len(WEIGHTS_MAGIC), "magic") != WEIGHTS_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic, not a VOXW1 checkpoint")
    descriptor = parse_descriptor(reader.take(reader.u32("descriptor length"), "descriptor").decode("utf-8"))
    tensors = {}
    for _ in range(reader.u32("blob count")):
        name = reader.take(reader.u32("name length"), "name").decode("utf-8")
        dims = tuple(reader.u32(f"{name} dims") for _ in range(reader.u32(f"{name} rank")))
        count = int(np.prod(dims, dtype=np.int64))
        payload = reader.take(4 * count, f"{name} payload")
        tensors[name] = torch.from_numpy(np.frombuffer(payload, dtype="<f4").reshape(dims).copy())
    if reader.pos != len(reader.blob):
        raise VolumeFormatError(f"{path}: {len(reader.blob) - reader.pos} trailing bytes after the last blob")
    return descriptor, tensors
