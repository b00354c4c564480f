from ._pretrain import (
    FINAL_CHECKPOINT,
    PretrainConfig,
    PretrainDataset,
    PretrainResult,
    PretrainSample,
    build_pretrain_sample,
    pretrain,
    pretrain_step,
)

__all__ = [
    "FINAL_CHECKPOINT",
    "PretrainConfig",
    "PretrainDataset",
    "PretrainResult",
    "PretrainSample",
    "build_pretrain_sample",
    "pretrain",
    "pretrain_step",
]
