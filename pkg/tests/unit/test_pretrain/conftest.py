import pytest

from vectorpose.lib.dataset import load_dataset


@pytest.fixture
def volumes(tiny_config):
    dataset = load_dataset(tiny_config().data)
    return [case.volume for case in dataset.training]
