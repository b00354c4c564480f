import pytest
import torch
from torch import nn

from vectorpose.lib.checkpoint import Checkpoint
from vectorpose.lib.dataset import load_dataset
from vectorpose.lib.network import PretrainNet


class ThresholdNet(nn.Module):
    """Labels voxels brighter than threshold as 1, records tile shapes"""

    def __init__(self, threshold=0.5):
        super().__init__()
        self.threshold = threshold
        self.tiles = []

    def forward(self, x):
        self.tiles.append(tuple(x.shape))
        return torch.cat([torch.zeros_like(x), x - self.threshold], dim=1)


@pytest.fixture
def threshold_net():
    return ThresholdNet()


@pytest.fixture
def dataset(tiny_config):
    return load_dataset(tiny_config().data)


@pytest.fixture
def pretrained(tiny_config):
    def _pretrained(*overrides):
        network = tiny_config(*overrides).network
        return Checkpoint(
            kind="pretrain",
            network=network.to_dict(),
            model=PretrainNet(network).state_dict(),
        )

    return _pretrained
