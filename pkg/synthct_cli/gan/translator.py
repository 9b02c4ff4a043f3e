"""Per-patch MR -> CT-space translators used at inference.

A translator maps a (N, P, P) batch of MR patches in [0, 255] to CT-space
patches in [0, 255]. Each patch comes with its site ``(view, index, u0, v0)``:
the slice it was cut from and its origin in that slice. Only the oracle reads
the site.
"""
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from gan.trainer import checkpoint_path, load_model
from grid import Volume, slice_array
from models import NET_MAX, MissingArtifactError, ModelKind, ShapeMismatchError, View
from nncore.networks import GeneratorNet
from phantom import class_to_hu
from prep import hu_to_net
from tiles import extract_patch

PatchSite = Tuple[View, int, int, int]


def _check_batch(patches: np.ndarray, patch: int):
    if patches.ndim != 3 or patches.shape[1:] != (patch, patch):
        raise ShapeMismatchError(f"expected a batch of {patch}x{patch} patches, got shape {patches.shape}")


class Translator:
    name = "translator"

    def __init__(self, patch: int):
        self.patch = patch

    def translate_batch(self, patches: np.ndarray, sites: Sequence[PatchSite]) -> np.ndarray:
        raise NotImplementedError


class IdentityTranslator(Translator):
    name = "identity"

    def translate_batch(self, patches, sites):
        _check_batch(patches, self.patch)
        return np.asarray(patches, dtype=np.float32).copy()


class OracleTranslator(Translator):
    """Noise-free CT read from the phantom class map at each patch site."""
    name = "oracle"

    def __init__(self, labels: Volume, patch: int):
        super().__init__(patch)
        self.net_values = hu_to_net(class_to_hu(labels.values))

    def translate_batch(self, patches, sites):
        _check_batch(patches, self.patch)
        if len(sites) != len(patches):
            raise ValueError(f"{len(patches)} patches but {len(sites)} sites")
        out = np.empty((len(patches), self.patch, self.patch), dtype=np.float32)
        for k, (view, index, u0, v0) in enumerate(sites):
            image = slice_array(self.net_values, view, index)
            out[k] = extract_patch(image, (u0, v0), self.patch)
        return out


class GeneratorTranslator(Translator):
    name = "model"

    def __init__(self, generator: GeneratorNet, patch: int, batch_size: int = 64):
        super().__init__(patch)
        self.generator = generator.eval()
        self.batch_size = batch_size

    def translate_batch(self, patches, sites):
        _check_batch(patches, self.patch)
        chunks = [self.generator.infer(patches[i:i + self.batch_size])
                  for i in range(0, len(patches), self.batch_size)]
        if not chunks:
            return np.empty((0, self.patch, self.patch), dtype=np.float32)
        return np.clip(np.concatenate(chunks), 0.0, NET_MAX).astype(np.float32)


def translate_patch(t: Translator, patch: np.ndarray, site: Optional[PatchSite] = None) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float32)
    if patch.shape != (t.patch, t.patch):
        raise ShapeMismatchError(f"{t.name} translator expects {t.patch}x{t.patch} patches, got {patch.shape}")
    return t.translate_batch(patch[None], [site])[0]


def translator_factory(kind: str, view: View, patch: int, labels: Optional[Volume] = None,
                       models_dir: Optional[Path] = None, model_kind: ModelKind = ModelKind.PIX2PIX) -> Translator:
    if kind == "identity":
        return IdentityTranslator(patch)
    if kind == "oracle":
        if labels is None:
            raise MissingArtifactError("phantom label map for the oracle translator", "<case>_labels.voxv")
        return OracleTranslator(labels, patch)
    if kind == "model":
        path = checkpoint_path(models_dir, model_kind, view)
        return GeneratorTranslator(load_model(path).generator, patch)
    raise ValueError(f"unknown translator kind {kind!r}: expected identity, oracle or model")
