"""Shared fixtures: tiny models, a small synthetic dataset on disk."""

import numpy as np
import pytest

from mdcn.data import build_dataset, save_image, synthetic_image, LoadedDataset
from mdcn.model import ModelConfig, build


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(
        n_blocks=2, channels=8, hfdb_inner=4, cam_reduction=4,
        factors=(2, 3, 4), block_kind="mdcb", hierarchy="HFDB",
        paths="both", fefm=True, residual=True,
    )


@pytest.fixture()
def tiny_store(tiny_config):
    return build(tiny_config, seed=0)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Six 72x72 synthetic images degraded at x2/x3/x4, one held out as val."""
    root = tmp_path_factory.mktemp("ds")
    hr_dir = root / "hr"
    hr_dir.mkdir()
    for i in range(6):
        save_image(synthetic_image(200 + i, 72, 72), hr_dir / f"img{i:02d}.png")
    out = root / "data"
    build_dataset(hr_dir, out, (2, 3, 4), val_count=1)
    return out


@pytest.fixture(scope="session")
def dataset(dataset_dir):
    return LoadedDataset.open(dataset_dir / "manifest.json")


def randomize_store(store, seed=123, scale=0.5):
    """Overwrite every parameter (weights and the zero biases) with random
    values so structural shortcuts cannot mask wiring bugs."""
    rng = np.random.default_rng(seed)
    for _name, t in store.items():
        t.data = rng.uniform(-scale, scale, size=t.shape).astype(t.data.dtype)
    return store
