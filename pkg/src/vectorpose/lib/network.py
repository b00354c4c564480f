"""
Encoder-decoder with pretext and segmentation heads.

    input (B, 1, D, H, W)
      -> encoder: feature pyramid with strides 2, 4, ... (TINY) or
         2, 4, 8, 16, 32 (RESNET50_3D)
      -> decoder: trilinear upsampling, channel-matching 1x1x1 projections of
         the encoder features added on the way up, full input resolution
      -> VP head: global average pooling of the deepest encoder stage (or of
         the decoder output), 2-layer MLP, (B, n, 3) logits
      -> BFR head: 1x1x1 convolution, (B, 2, D, H, W) voxel and boundary logits
      -> segmentation head: 1x1x1 convolution, (B, C, D, H, W) class logits

Parameter names are canonical: "backbone.encoder.*", "backbone.decoder.*",
"vp_head.*", "bfr_head.*", "seg_head.*". Only "backbone.*" is transferred
from pretraining to fine-tuning.
"""

from dataclasses import asdict, dataclass
import logging
import math

import torch
from torch import nn
import torch.nn.functional as F

from ..errors import (
    ConfigError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
)

__all__ = [
    "NetworkConfig",
    "ENCODERS",
    "BACKBONE_PREFIX",
    "Backbone",
    "PretrainNet",
    "SegmentationNet",
    "TransferManifest",
    "transfer_weights",
    "backbone_config_diff",
]

logger = logging.getLogger(__name__)

TINY = "tiny"
RESNET50_3D = "resnet50"
ENCODERS = (TINY, RESNET50_3D)
VP_SOURCES = ("encoder", "decoder")
SUPPORTED_N_VECTORS = (0, 1, 2, 5, 9)
BACKBONE_PREFIX = "backbone."

# (blocks, width multiplier) per residual stage of ResNet-50
RESNET50_LAYERS = ((3, 1), (4, 2), (6, 4), (3, 8))

# fields defining backbone parameter shapes
BACKBONE_FIELDS = ("encoder", "base_channels", "num_stages", "decoder_channels")


@dataclass
class NetworkConfig:
    encoder: str = TINY
    base_channels: int = 8
    # stride 2 stages of the TINY encoder, RESNET50_3D always has 5
    num_stages: int = 4
    decoder_channels: int = 16
    vp_hidden: int = 256
    vp_source: str = "encoder"
    # 0 disables the VP head
    n_vectors: int = 9
    bfr_channels: int = 2
    num_classes: int = 7

    def __post_init__(self):
        def check(condition, key, reason):
            if not condition:
                raise ConfigError(key, reason)

        check(
            self.encoder in ENCODERS,
            "encoder",
            f"should be one of {ENCODERS}, given: {self.encoder!r}",
        )
        check(
            self.base_channels >= 1,
            "base_channels",
            f"should be positive, given: {self.base_channels!r}",
        )
        check(
            1 <= self.num_stages <= 6,
            "num_stages",
            f"should be in [1, 6], given: {self.num_stages!r}",
        )
        check(
            self.decoder_channels >= 1,
            "decoder_channels",
            f"should be positive, given: {self.decoder_channels!r}",
        )
        check(
            self.vp_hidden >= 1,
            "vp_hidden",
            f"should be positive, given: {self.vp_hidden!r}",
        )
        check(
            self.vp_source in VP_SOURCES,
            "vp_source",
            f"should be one of {VP_SOURCES}, given: {self.vp_source!r}",
        )
        check(
            self.n_vectors in SUPPORTED_N_VECTORS,
            "n_vectors",
            f"should be one of {SUPPORTED_N_VECTORS}, "
            f"given: {self.n_vectors!r}",
        )
        check(
            self.bfr_channels == 2,
            "bfr_channels",
            f"should be 2 (voxel and boundary), given: {self.bfr_channels!r}",
        )
        check(
            self.num_classes >= 2,
            "num_classes",
            f"should be >= 2, given: {self.num_classes!r}",
        )

    @property
    def total_stride(self):
        if self.encoder == RESNET50_3D:
            return 32
        return 2**self.num_stages

    def to_dict(self):
        return asdict(self)


def _norm(kind, channels):
    if kind == RESNET50_3D:
        return nn.BatchNorm3d(channels)
    return nn.GroupNorm(math.gcd(channels, 4), channels)


def _conv_norm_relu(kind, in_channels, out_channels, stride=1):
    return [
        nn.Conv3d(
            in_channels,
            out_channels,
            kernel_size=3,
            stride=stride,
            padding=1,
            bias=False,
        ),
        _norm(kind, out_channels),
        nn.ReLU(inplace=True),
    ]


class TinyEncoder(nn.Module):
    def __init__(self, base_channels, num_stages):
        super().__init__()
        self.channels = [base_channels * 2**i for i in range(num_stages)]
        self.strides = [2 ** (i + 1) for i in range(num_stages)]
        stages = []
        in_channels = 1
        for out_channels in self.channels:
            stages.append(
                nn.Sequential(
                    *_conv_norm_relu(TINY, in_channels, out_channels, stride=2),
                    *_conv_norm_relu(TINY, out_channels, out_channels),
                )
            )
            in_channels = out_channels
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_channels, width, stride=1):
        super().__init__()
        out_channels = width * self.expansion
        self.conv1 = nn.Conv3d(in_channels, width, kernel_size=1, bias=False)
        self.bn1 = nn.BatchNorm3d(width)
        self.conv2 = nn.Conv3d(
            width, width, kernel_size=3, stride=stride, padding=1, bias=False
        )
        self.bn2 = nn.BatchNorm3d(width)
        self.conv3 = nn.Conv3d(width, out_channels, kernel_size=1, bias=False)
        self.bn3 = nn.BatchNorm3d(out_channels)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_channels != out_channels:
            self.downsample = nn.Sequential(
                nn.Conv3d(
                    in_channels,
                    out_channels,
                    kernel_size=1,
                    stride=stride,
                    bias=False,
                ),
                nn.BatchNorm3d(out_channels),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ResNet3DEncoder(nn.Module):
    """3D ResNet-50: stem (stride 2), max pooling and 4 residual stages"""

    def __init__(self, base_channels):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv3d(
                1, base_channels, kernel_size=7, stride=2, padding=3, bias=False
            ),
            nn.BatchNorm3d(base_channels),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool3d(kernel_size=3, stride=2, padding=1)

        self.channels = [base_channels]
        layers = []
        in_channels = base_channels
        for index, (blocks, multiplier) in enumerate(RESNET50_LAYERS):
            width = base_channels * multiplier
            stride = 1 if index == 0 else 2
            layer = [Bottleneck(in_channels, width, stride)]
            in_channels = width * Bottleneck.expansion
            layer.extend(
                Bottleneck(in_channels, width) for _ in range(blocks - 1)
            )
            layers.append(nn.Sequential(*layer))
            self.channels.append(in_channels)
        self.layers = nn.ModuleList(layers)
        self.strides = [2, 4, 8, 16, 32]

    def forward(self, x):
        x = self.stem(x)
        features = [x]
        x = self.pool(x)
        for layer in self.layers:
            x = layer(x)
            features.append(x)
        return features


class Decoder(nn.Module):
    def __init__(self, kind, encoder_channels, channels):
        super().__init__()
        self.laterals = nn.ModuleList(
            nn.Conv3d(c, channels, kernel_size=1, bias=False)
            for c in encoder_channels
        )
        self.smooth = nn.ModuleList(
            nn.Sequential(*_conv_norm_relu(kind, channels, channels))
            for _ in encoder_channels
        )
        self.head = nn.Sequential(*_conv_norm_relu(kind, channels, channels))

    def forward(self, features, size):
        x = self.smooth[-1](self.laterals[-1](features[-1]))
        for index in reversed(range(len(features) - 1)):
            x = F.interpolate(
                x,
                size=features[index].shape[2:],
                mode="trilinear",
                align_corners=False,
            )
            x = self.smooth[index](x + self.laterals[index](features[index]))
        x = F.interpolate(x, size=size, mode="trilinear", align_corners=False)
        return self.head(x)


class Backbone(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        if config.encoder == RESNET50_3D:
            self.encoder = ResNet3DEncoder(config.base_channels)
        else:
            self.encoder = TinyEncoder(config.base_channels, config.num_stages)
        self.decoder = Decoder(
            config.encoder, self.encoder.channels, config.decoder_channels
        )

    @property
    def deepest_channels(self):
        return self.encoder.channels[-1]

    def check_input(self, x):
        if x.dim() != 5 or x.shape[1] != 1:
            raise InvalidArgumentError(
                f"Expected input of shape (B, 1, D, H, W), given: "
                f"{tuple(x.shape)}"
            )
        stride = self.config.total_stride
        if any(e % stride for e in x.shape[2:]):
            raise InvalidArgumentError(
                f"Input extents {tuple(x.shape[2:])} are not divisible by the "
                f"total stride {stride}"
            )

    def forward(self, x):
        self.check_input(x)
        features = self.encoder(x)
        return features, self.decoder(features, x.shape[2:])


class VPHead(nn.Module):
    def __init__(self, in_channels, hidden, n_vectors):
        super().__init__()
        self.n_vectors = n_vectors
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.mlp = nn.Sequential(
            nn.Linear(in_channels, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, 3 * n_vectors),
        )

    def forward(self, x):
        return self.mlp(self.pool(x).flatten(1)).view(-1, self.n_vectors, 3)


class PretrainNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config)
        self.vp_head = None
        if config.n_vectors:
            in_channels = (
                self.backbone.deepest_channels
                if config.vp_source == "encoder"
                else config.decoder_channels
            )
            self.vp_head = VPHead(
                in_channels, config.vp_hidden, config.n_vectors
            )
        self.bfr_head = nn.Conv3d(
            config.decoder_channels, config.bfr_channels, kernel_size=1
        )

    def forward_pretrain(self, x):
        """(VP logits (B, n, 3) or None, BFR logits (B, 2, D, H, W))"""
        features, decoded = self.backbone(x)
        vp_logits = None
        if self.vp_head is not None:
            source = decoded
            if self.config.vp_source == "encoder":
                source = features[-1]
            vp_logits = self.vp_head(source)
        return vp_logits, self.bfr_head(decoded)

    forward = forward_pretrain


class SegmentationNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config)
        self.seg_head = nn.Conv3d(
            config.decoder_channels, config.num_classes, kernel_size=1
        )

    def forward_segment(self, x):
        _, decoded = self.backbone(x)
        return self.seg_head(decoded)

    forward = forward_segment


@dataclass
class TransferManifest:
    transferred: list
    new: list

    @property
    def total(self):
        return len(self.transferred) + len(self.new)

    def to_dict(self):
        return {"transferred": self.transferred, "new": self.new}


def backbone_config_diff(source, target):
    """Differing backbone fields of two network config dicts"""
    return [
        f"network.{name}: {source.get(name)!r} != {target.get(name)!r}"
        for name in BACKBONE_FIELDS
        if source.get(name) != target.get(name)
    ]


def transfer_weights(pretrained_state, model):
    """
    Copies every backbone tensor of a pretraining state dict into model.
    Heads of model keep their fresh initialization.
    """
    target_state = model.state_dict()
    target_keys = [k for k in target_state if k.startswith(BACKBONE_PREFIX)]
    source = {
        k: v
        for k, v in pretrained_state.items()
        if k.startswith(BACKBONE_PREFIX)
    }

    diff = {
        "missing": sorted(set(target_keys) - source.keys()),
        "unexpected": sorted(source.keys() - set(target_keys)),
        "mismatched": [
            f"{k}: {tuple(source[k].shape)} != {tuple(target_state[k].shape)}"
            for k in target_keys
            if k in source and source[k].shape != target_state[k].shape
        ],
    }
    if any(diff.values()):
        raise IncompatibleCheckpointError(diff)

    for key in target_keys:
        target_state[key] = source[key].detach().clone()
    model.load_state_dict(target_state, strict=True)

    manifest = TransferManifest(
        transferred=target_keys,
        new=[k for k in target_state if not k.startswith(BACKBONE_PREFIX)],
    )
    logger.info(
        "Transferred %d tensors, %d new tensors",
        len(manifest.transferred),
        len(manifest.new),
    )
    return manifest
