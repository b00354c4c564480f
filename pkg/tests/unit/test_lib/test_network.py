import pytest
import torch

from vectorpose.errors import (
    ConfigError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
)
from vectorpose.lib.network import (
    BACKBONE_PREFIX,
    NetworkConfig,
    PretrainNet,
    SegmentationNet,
    backbone_config_diff,
    transfer_weights,
)

HEAD_PREFIXES = ("vp_head.", "bfr_head.", "seg_head.")


@pytest.fixture
def tiny_network():
    def _tiny_network(**kwargs):
        params = {
            "base_channels": 4,
            "num_stages": 2,
            "decoder_channels": 8,
            "vp_hidden": 16,
            **kwargs,
        }
        return NetworkConfig(**params)

    return _tiny_network


@pytest.mark.parametrize(
    "kwargs, key",
    (
        ({"encoder": "vgg"}, "encoder"),
        ({"base_channels": 0}, "base_channels"),
        ({"num_stages": 7}, "num_stages"),
        ({"decoder_channels": 0}, "decoder_channels"),
        ({"vp_hidden": 0}, "vp_hidden"),
        ({"vp_source": "bottleneck"}, "vp_source"),
        ({"n_vectors": 3}, "n_vectors"),
        ({"bfr_channels": 1}, "bfr_channels"),
        ({"num_classes": 1}, "num_classes"),
    ),
)
def test_network_config_invalid(kwargs, key):
    with pytest.raises(ConfigError) as exc:
        NetworkConfig(**kwargs)
    assert exc.value.key == key


@pytest.mark.parametrize(
    "kwargs, stride",
    (({"num_stages": 3}, 8), ({"encoder": "resnet50", "num_stages": 2}, 32)),
)
def test_total_stride(kwargs, stride):
    assert NetworkConfig(**kwargs).total_stride == stride


def test_pretrain_net_shapes(tiny_network):
    net = PretrainNet(tiny_network())
    vp_logits, bfr_logits = net(torch.zeros((2, 1, 16, 12, 8)))
    assert vp_logits.shape == (2, 9, 3)
    assert bfr_logits.shape == (2, 2, 16, 12, 8)


@pytest.mark.parametrize("n_vectors", (1, 2, 5))
def test_pretrain_net_n_vectors(tiny_network, n_vectors):
    net = PretrainNet(tiny_network(n_vectors=n_vectors))
    vp_logits, _ = net(torch.zeros((1, 1, 8, 8, 8)))
    assert vp_logits.shape == (1, n_vectors, 3)


def test_pretrain_net_decoder_source(tiny_network):
    net = PretrainNet(tiny_network(vp_source="decoder"))
    assert net.vp_head.mlp[0].in_features == 8
    vp_logits, _ = net(torch.zeros((1, 1, 8, 8, 8)))
    assert vp_logits.shape == (1, 9, 3)


def test_pretrain_net_without_vp(tiny_network):
    net = PretrainNet(tiny_network(n_vectors=0))
    vp_logits, bfr_logits = net(torch.zeros((1, 1, 8, 8, 8)))
    assert vp_logits is None
    assert bfr_logits.shape == (1, 2, 8, 8, 8)
    assert not any(k.startswith("vp_head.") for k in net.state_dict())


def test_segmentation_net_shapes(tiny_network):
    net = SegmentationNet(tiny_network(num_classes=4))
    logits = net(torch.zeros((2, 1, 8, 8, 16)))
    assert logits.shape == (2, 4, 8, 8, 16)


@pytest.mark.parametrize(
    "shape, match",
    (
        ((1, 2, 8, 8, 8), "Expected input of shape"),
        ((1, 8, 8, 8), "Expected input of shape"),
        ((1, 1, 8, 8, 6), "not divisible by the total stride 4"),
    ),
)
def test_invalid_input(tiny_network, shape, match):
    net = PretrainNet(tiny_network())
    with pytest.raises(InvalidArgumentError, match=match):
        net(torch.zeros(shape))


def test_canonical_parameter_names(tiny_network):
    for net in (PretrainNet(tiny_network()), SegmentationNet(tiny_network())):
        for key in net.state_dict():
            assert key.startswith((BACKBONE_PREFIX, *HEAD_PREFIXES)), key


def test_resnet50_encoder():
    config = NetworkConfig(
        encoder="resnet50", base_channels=2, decoder_channels=4, vp_hidden=8
    )
    net = PretrainNet(config).eval()
    assert net.backbone.encoder.channels == [2, 8, 16, 32, 64]
    with torch.no_grad():
        vp_logits, bfr_logits = net(torch.zeros((1, 1, 32, 32, 32)))
    assert vp_logits.shape == (1, 9, 3)
    assert bfr_logits.shape == (1, 2, 32, 32, 32)


def test_gradients_reach_backbone(tiny_network):
    net = PretrainNet(tiny_network())
    vp_logits, bfr_logits = net(torch.rand((2, 1, 8, 8, 8)))
    (vp_logits.sum() + bfr_logits.sum()).backward()
    for name, parameter in net.named_parameters():
        assert parameter.grad is not None, name


def test_transfer_weights(tiny_network):
    torch.manual_seed(0)
    pretrained = PretrainNet(tiny_network())
    fresh = SegmentationNet(tiny_network())
    seg_head = {
        k: v.clone()
        for k, v in fresh.state_dict().items()
        if k.startswith("seg_head.")
    }

    manifest = transfer_weights(pretrained.state_dict(), fresh)

    source = pretrained.state_dict()
    state = fresh.state_dict()
    assert manifest.total == len(state)
    assert manifest.new == ["seg_head.weight", "seg_head.bias"]
    assert all(k.startswith(BACKBONE_PREFIX) for k in manifest.transferred)
    for key in manifest.transferred:
        assert torch.equal(state[key], source[key])
    for key, value in seg_head.items():
        assert torch.equal(state[key], value)
    assert manifest.to_dict() == {
        "transferred": manifest.transferred,
        "new": manifest.new,
    }


def test_transfer_weights_independent_copy(tiny_network):
    pretrained = PretrainNet(tiny_network())
    fresh = SegmentationNet(tiny_network())
    transfer_weights(pretrained.state_dict(), fresh)
    with torch.no_grad():
        for parameter in fresh.backbone.parameters():
            parameter.add_(1.0)
    key = next(iter(fresh.backbone.state_dict()))
    assert not torch.equal(
        pretrained.state_dict()[BACKBONE_PREFIX + key],
        fresh.state_dict()[BACKBONE_PREFIX + key],
    )


def test_transfer_weights_mismatch(tiny_network):
    pretrained = PretrainNet(tiny_network(base_channels=8))
    fresh = SegmentationNet(tiny_network())
    with pytest.raises(IncompatibleCheckpointError) as exc:
        transfer_weights(pretrained.state_dict(), fresh)
    assert exc.value.diff["mismatched"]
    assert "mismatched: backbone." in str(exc.value)


def test_transfer_weights_missing(tiny_network):
    pretrained = PretrainNet(tiny_network(num_stages=1))
    fresh = SegmentationNet(tiny_network())
    with pytest.raises(IncompatibleCheckpointError) as exc:
        transfer_weights(pretrained.state_dict(), fresh)
    assert exc.value.diff["missing"]
    assert not exc.value.diff["unexpected"]


def test_backbone_config_diff(tiny_network):
    source = tiny_network().to_dict()
    target = tiny_network(base_channels=8, vp_hidden=32).to_dict()
    assert backbone_config_diff(source, target) == [
        "network.base_channels: 4 != 8"
    ]
    assert backbone_config_diff(source, source) == []
