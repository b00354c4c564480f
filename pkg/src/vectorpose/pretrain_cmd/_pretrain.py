"""
Pretext pretraining.

Per crop, strictly in this order and from the crop's own RNG stream:
    landmark -> crop -> T_S -> VP and BFR targets -> T_I
so targets always describe the clean, spatially transformed crop while the
network sees its noised copy. T_S is the identity for the 2- and 5-vector
layouts: their corners are not closed under flips and rotations.
"""

from dataclasses import dataclass, field
from pathlib import Path
import logging

import numpy as np
import torch
from torch.utils.data import Dataset

from ..errors import ConfigError
from ..lib.augment import (
    TransformRecord,
    apply_intensity,
    apply_spatial,
    sample_spatial,
)
from ..lib.boundary import boundary_target
from ..lib.geometry import (
    OriginLayout,
    circumscribing_radius,
    make_landmark,
    make_origin_points,
    vp_targets,
)
from ..lib.losses import RECONSTRUCTION_CRITERIA, pretext_loss
from ..lib.metrics import MetricRecord, MetricsWriter
from ..lib.network import PretrainNet
from ..lib.checkpoint import save_checkpoint
from ..lib.seeding import rng_for, seed_everything
from ..lib.training import (
    Stopwatch,
    check_finite,
    check_schedule,
    make_loader,
    make_train_state,
)
from ..lib.volume import sample_crop

__all__ = [
    "FINAL_CHECKPOINT",
    "PretrainConfig",
    "PretrainSample",
    "PretrainDataset",
    "PretrainResult",
    "build_pretrain_sample",
    "pretrain_step",
    "pretrain",
]

logger = logging.getLogger(__name__)

FINAL_CHECKPOINT = "pretrain_final.pt"


@dataclass
class PretrainConfig:
    epochs: int = 300
    batch_size: int = 12
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    # AdamW is the only optimizer
    optimizer: str = "adamw"
    crop_extents: tuple = (96, 96, 96)
    eta: float = 0.05
    alpha: float = 5.0
    # "lambda" in run configs
    lambda_: float = 0.5
    boundary: bool = True
    reconstruction: str = "l1"
    crops_per_volume: int = 16
    schedule: str = "constant"
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        def check(condition, key, reason):
            if not condition:
                raise ConfigError(key, reason)

        for name in (
            "epochs",
            "batch_size",
            "crops_per_volume",
            "checkpoint_every",
        ):
            value = getattr(self, name)
            check(value >= 1, name, f"should be positive, given: {value!r}")
        for name in ("learning_rate", "alpha"):
            value = getattr(self, name)
            check(value > 0, name, f"should be positive, given: {value!r}")
        check(
            self.weight_decay >= 0,
            "weight_decay",
            f"should be non-negative, given: {self.weight_decay!r}",
        )
        check(
            self.optimizer == "adamw",
            "optimizer",
            f"only 'adamw' is supported, given: {self.optimizer!r}",
        )
        check(
            len(self.crop_extents) == 3 and min(self.crop_extents) >= 3,
            "crop_extents",
            f"should be 3 extents >= 3, given: {self.crop_extents!r}",
        )
        check(
            0 <= self.eta < 0.5,
            "eta",
            f"should be in [0, 0.5), given: {self.eta!r}",
        )
        check(
            0 <= self.lambda_ <= 1,
            "lambda",
            f"should be in [0, 1], given: {self.lambda_!r}",
        )
        check(
            self.reconstruction in RECONSTRUCTION_CRITERIA,
            "reconstruction",
            f"should be one of {RECONSTRUCTION_CRITERIA}, "
            f"given: {self.reconstruction!r}",
        )
        check_schedule(self.schedule)


@dataclass
class PretrainSample:
    # T_I(T_S(crop))
    input: np.ndarray
    # T_S(crop)
    voxel_target: np.ndarray
    boundary_target: np.ndarray = None
    # (n, 3) normalized spherical targets
    vp_targets: np.ndarray = None
    placement: object = None
    transform: object = None
    landmark: object = None
    seed: tuple = ()

    def to_tensors(self):
        item = {
            "input": torch.from_numpy(self.input[None].astype(np.float32)),
            "voxel_target": torch.from_numpy(
                self.voxel_target.astype(np.float32)
            ),
            "seed": torch.tensor(self.seed, dtype=torch.int64),
        }
        if self.boundary_target is not None:
            item["boundary_target"] = torch.from_numpy(self.boundary_target)
        if self.vp_targets is not None:
            item["vp_targets"] = torch.from_numpy(
                self.vp_targets.astype(np.float32)
            )
        return item


def build_pretrain_sample(volume, rng, *, config, seed=()):
    """
    One training sample of volume. config is a RunConfig; its data, augment,
    network and pretrain sections are used.
    """
    data_cfg = config.data
    pretrain_cfg = config.pretrain

    landmark = make_landmark(
        volume.shape, pretrain_cfg.eta, rng, data_cfg.landmark_base
    )
    crop, placement = sample_crop(
        volume,
        pretrain_cfg.crop_extents,
        data_cfg.min_informative_fraction,
        rng,
        background_threshold=data_cfg.background_threshold,
        max_retries=data_cfg.max_retries,
        scale_jitter=data_cfg.scale_jitter,
        landmark=landmark,
    )
    layout = None
    if config.network.n_vectors:
        layout = OriginLayout.from_n_vectors(config.network.n_vectors)
    transform = TransformRecord()
    if layout is None or layout.is_full or layout.n == 1:
        transform = sample_spatial(rng, config.augment.spatial, crop.shape)
    clean = apply_spatial(crop, transform)

    targets = None
    if layout is not None:
        origins = make_origin_points(clean.shape, layout)
        targets = vp_targets(
            placement,
            transform,
            origins,
            landmark,
            circumscribing_radius(volume.shape),
        ).targets

    edges = None
    if pretrain_cfg.boundary:
        edges = boundary_target(clean).magnitude

    noised = apply_intensity(clean, config.augment.intensity, rng)
    return PretrainSample(
        input=noised,
        voxel_target=clean,
        boundary_target=edges,
        vp_targets=targets,
        placement=placement,
        transform=transform,
        landmark=landmark,
        seed=tuple(seed),
    )


class PretrainDataset(Dataset):
    """
    crops_per_volume samples per volume and epoch. Item i of epoch e is the
    crop number order[i] of a seeded permutation; crop k draws from the
    stream (seed, e, k).
    """

    def __init__(self, volumes, config, seed, epoch=0):
        self.volumes = list(volumes)
        self.config = config
        self.seed = seed
        self.crops_per_volume = config.pretrain.crops_per_volume
        self.set_epoch(epoch)

    def set_epoch(self, epoch):
        self.epoch = epoch
        self._order = rng_for(self.seed, epoch).permutation(len(self))

    def __len__(self):
        return len(self.volumes) * self.crops_per_volume

    def sample(self, index):
        crop_index = int(self._order[index])
        volume = self.volumes[crop_index // self.crops_per_volume]
        rng = rng_for(self.seed, self.epoch, crop_index)
        return build_pretrain_sample(
            volume,
            rng,
            config=self.config,
            seed=(self.seed, self.epoch, crop_index),
        )

    def __getitem__(self, index):
        return self.sample(index).to_tensors()


def pretrain_step(state, batch, config):
    """
    One optimizer update on a collated batch of PretrainSample tensors.
    config is a PretrainConfig. Returns (state, LossBreakdown).
    """
    model = state.model
    model.train()
    vp_logits, bfr_logits = model(batch["input"])
    loss, breakdown = pretext_loss(
        vp_logits,
        batch.get("vp_targets"),
        bfr_logits,
        batch["voxel_target"],
        batch.get("boundary_target"),
        alpha=config.alpha,
        lambda_=config.lambda_,
        reconstruction=config.reconstruction,
    )
    check_finite(loss, state.step, [tuple(s) for s in batch["seed"].tolist()])

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return state, breakdown


@dataclass
class PretrainResult:
    checkpoint: Path
    records: list = field(default_factory=list)


def _epoch_means(breakdowns):
    return {
        name: float(np.mean([getattr(b, name) for b in breakdowns]))
        for name in ("l_total", "l_vp", "l_bfr")
    }


def pretrain(
    config,
    volumes,
    out_dir,
    *,
    deterministic=False,
    config_hash=None,
    resume=None,
):
    """
    Runs pretraining of config (RunConfig) on volumes. Writes per-step
    metrics into out_dir and checkpoints every checkpoint_every epochs plus
    a final one.
    """
    pretrain_cfg = config.pretrain
    out_dir = Path(out_dir)
    checkpoints_dir = out_dir / config.output.checkpoints_dir

    seed_everything(pretrain_cfg.seed, deterministic)
    state = make_train_state(
        PretrainNet(config.network),
        pretrain_cfg.learning_rate,
        pretrain_cfg.weight_decay,
        pretrain_cfg.schedule,
        pretrain_cfg.epochs,
    )
    if resume is not None:
        state.restore(resume)

    dataset = PretrainDataset(volumes, config, pretrain_cfg.seed)
    loader = make_loader(
        dataset, pretrain_cfg.batch_size, config.data.num_workers
    )
    logger.info(
        "Pretraining on %d volumes: %d crops per epoch, %d epochs",
        len(dataset.volumes),
        len(dataset),
        pretrain_cfg.epochs,
    )

    records = []
    stopwatch = Stopwatch(deterministic)
    final_path = checkpoints_dir / FINAL_CHECKPOINT
    with MetricsWriter(
        out_dir / config.output.metrics_file, append=resume is not None
    ) as writer:
        for epoch in range(state.epoch, pretrain_cfg.epochs):
            dataset.set_epoch(epoch)
            breakdowns = []
            for batch in loader:
                state, breakdown = pretrain_step(state, batch, pretrain_cfg)
                breakdowns.append(breakdown)
                record = MetricRecord(
                    phase="pretrain",
                    step=state.step,
                    epoch=epoch,
                    l_total=breakdown.l_total,
                    l_vp=breakdown.l_vp,
                    l_bfr=breakdown.l_bfr,
                    wall_time=stopwatch.elapsed(),
                )
                writer.write(record)
                records.append(record)
                logger.debug(
                    "step %d: %s", state.step, breakdown.to_dict()
                )

            if state.scheduler is not None:
                state.scheduler.step()
            state.epoch = epoch + 1

            means = _epoch_means(breakdowns)
            logger.info(
                "Epoch %d/%d: l_total %.5f, l_vp %.5f, l_bfr %.5f",
                state.epoch,
                pretrain_cfg.epochs,
                means["l_total"],
                means["l_vp"],
                means["l_bfr"],
            )

            last = state.epoch == pretrain_cfg.epochs
            if last or state.epoch % pretrain_cfg.checkpoint_every == 0:
                checkpoint = state.to_checkpoint(
                    "pretrain", config.network, config_hash, extra=means
                )
                save_checkpoint(
                    checkpoint,
                    checkpoints_dir / f"pretrain_epoch_{state.epoch:04d}.pt",
                )
                if last:
                    save_checkpoint(checkpoint, final_path)

    logger.info("Final checkpoint: %s", final_path)
    return PretrainResult(checkpoint=final_path, records=records)
