"""Optimizer, schedule, data loading and checkpoint plumbing shared by loops"""

from dataclasses import dataclass
import logging
import math
import time

import torch
from torch.utils.data import DataLoader

from ..errors import ConfigError, DivergedTrainingError
from .checkpoint import Checkpoint

__all__ = [
    "SCHEDULES",
    "check_schedule",
    "TrainState",
    "make_train_state",
    "make_loader",
    "check_finite",
    "Stopwatch",
]

logger = logging.getLogger(__name__)

SCHEDULES = ("constant", "cosine")

# batches prepared ahead per worker
PREFETCH_FACTOR = 2


def check_schedule(schedule):
    if schedule not in SCHEDULES:
        raise ConfigError(
            "schedule", f"should be one of {SCHEDULES}, given: {schedule!r}"
        )


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    scheduler: object = None
    epoch: int = 0
    step: int = 0

    def to_checkpoint(self, kind, network, config_hash=None, extra=None):
        return Checkpoint(
            kind=kind,
            network=network.to_dict(),
            model=self.model.state_dict(),
            config_hash=config_hash,
            optimizer=self.optimizer.state_dict(),
            scheduler=(
                None if self.scheduler is None else self.scheduler.state_dict()
            ),
            epoch=self.epoch,
            step=self.step,
            rng=torch.get_rng_state(),
            extra=dict(extra or {}),
        )

    def restore(self, checkpoint):
        self.model.load_state_dict(checkpoint.model)
        if checkpoint.optimizer is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer)
        if self.scheduler is not None and checkpoint.scheduler is not None:
            self.scheduler.load_state_dict(checkpoint.scheduler)
        if checkpoint.rng is not None:
            torch.set_rng_state(checkpoint.rng)
        self.epoch = checkpoint.epoch
        self.step = checkpoint.step
        logger.info(
            "Restored state at epoch %d, step %d", self.epoch, self.step
        )


def make_train_state(model, learning_rate, weight_decay, schedule, epochs):
    """AdamW with a constant or cosine (stepped per epoch) learning rate"""
    check_schedule(schedule)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=learning_rate, weight_decay=weight_decay
    )
    scheduler = None
    if schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=max(epochs, 1)
        )
    return TrainState(model=model, optimizer=optimizer, scheduler=scheduler)


def make_loader(dataset, batch_size, num_workers):
    """
    Sequential loader: datasets order their items themselves, so batches
    don't depend on the worker count.
    """
    kwargs = {}
    if num_workers > 0:
        # bounded hand-off queue between workers and the trainer
        kwargs["prefetch_factor"] = PREFETCH_FACTOR
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=False,
        num_workers=num_workers,
        drop_last=False,
        **kwargs,
    )


def check_finite(loss, step, seeds):
    if not math.isfinite(float(loss.detach())):
        raise DivergedTrainingError(
            f"Non-finite loss at step {step}", seeds=seeds
        )


class Stopwatch:
    """Wall time since creation, None when running deterministically"""

    def __init__(self, deterministic=False):
        self.deterministic = deterministic
        self.start = time.monotonic()

    def elapsed(self):
        if self.deterministic:
            return None
        return round(time.monotonic() - self.start, 3)
