import json
import shutil

import numpy as np
import pytest

from vectorpose.config import RunConfig, apply_overrides
from vectorpose.lib.phantom import generate_phantoms
from vectorpose.lib.seeding import seed_everything
from vectorpose.lib.volume import Volume, normalize

# smallest sizes that still exercise every code path
TINY_RUN = {
    "data": {
        "source": "phantom",
        "phantom_count": 4,
        "phantom_test_count": 1,
        "phantom_shape": [24, 24, 24],
        "num_workers": 0,
    },
    "network": {
        "base_channels": 4,
        "num_stages": 2,
        "decoder_channels": 8,
        "vp_hidden": 16,
    },
    "pretrain": {
        "epochs": 1,
        "batch_size": 2,
        "crop_extents": [16, 16, 16],
        "crops_per_volume": 2,
        "checkpoint_every": 1,
    },
    "finetune": {
        "epochs": 1,
        "batch_size": 2,
        "crop_extents": [16, 16, 16],
        "crops_per_volume": 2,
        "runs": 2,
        "fraction": 0.5,
    },
    "output": {"save_figures": False},
}


@pytest.fixture
def tmpdir(tmp_path):
    yield tmp_path
    shutil.rmtree(tmp_path)


@pytest.fixture
def tiny_config_data():
    """Tiny run config as a dict, with optional section.key=value overrides"""

    def _tiny_config_data(*overrides):
        return apply_overrides(TINY_RUN, overrides)

    return _tiny_config_data


@pytest.fixture
def tiny_config(tiny_config_data):
    def _tiny_config(*overrides):
        return RunConfig.from_dict(tiny_config_data(*overrides))

    return _tiny_config


@pytest.fixture
def tiny_config_file(tmpdir, tiny_config_data):
    def _tiny_config_file(*overrides, name="tiny.json"):
        path = tmpdir / name
        path.write_text(json.dumps(tiny_config_data(*overrides)))
        return path

    return _tiny_config_file


@pytest.fixture
def phantom():
    """(normalized Volume, labels) of a phantom family"""

    def _phantom(shape=(24, 24, 24), seed=0, index=0):
        volume, labels = generate_phantoms(1, shape, seed, start=index)[0]
        return normalize(volume), labels

    return _phantom


@pytest.fixture
def volume():
    def _volume(data, spacing=None, name="volume"):
        return Volume(
            data=np.asarray(data, dtype=np.float32),
            spacing=spacing,
            name=name,
        )

    return _volume


@pytest.fixture
def deterministic_mode(monkeypatch):
    """Runs with deterministic=True switch torch into it for the session"""
    monkeypatch.setenv("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    yield
    seed_everything(0, deterministic=False)
