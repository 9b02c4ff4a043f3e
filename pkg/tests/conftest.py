import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "synthct_cli"))

from models import PhantomSpec  # noqa: E402
from phantom import generate_pair  # noqa: E402

# small but complete run: one train case, one test case, a 32^3 phantom and a two-level UNet
TINY_CONFIG = {
    'phantom.edge': 32,
    'phantom.train': 1,
    'phantom.val': 0,
    'phantom.test': 1,
    'phantom.abnormal_test': 0,
    'augment.cuts_per_slice': 1,
    'augment.mirror': 'false',
    'train.epochs': 1,
    'train.base_channels': 4,
    'train.depth': 2,
    'train.views': 'axial',
    'train.val_patches': 2,
}


@pytest.fixture(scope="session")
def clean_phantom():
    """Noise-free 32^3 (mr, ct, labels): every body voxel has a positive MR value."""
    return generate_pair(PhantomSpec(seed=7, edge=32, noise_sigma=0.0))


@pytest.fixture(scope="session")
def noisy_phantom():
    return generate_pair(PhantomSpec(seed=3, edge=32))


@pytest.fixture
def write_config(tmp_path):
    def write(values=None, name="run.conf"):
        merged = dict(TINY_CONFIG, **(values or {}))
        path = tmp_path / name
        path.write_text("".join(f"{key} = {value}\n" for key, value in merged.items()))
        return path
    return write
