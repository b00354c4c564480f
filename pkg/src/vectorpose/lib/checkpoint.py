"""
Versioned checkpoint container.

    {
        "version": 1,
        "kind": "pretrain" | "finetune",
        "network": NetworkConfig as dict,
        "config_hash": sha256 of the resolved run config,
        "model": state dict keyed by canonical parameter names,
        "optimizer": optimizer state dict or None,
        "scheduler": lr scheduler state dict or None,
        "epoch": completed epochs,
        "step": completed optimizer steps,
        "rng": torch RNG state,
        "extra": free-form metadata (e.g. best Dice),
    }
"""

from dataclasses import dataclass, field
from pathlib import Path
import logging
import pickle
import shutil

import torch

from ..errors import IncompatibleCheckpointError

__all__ = [
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_KINDS = ("pretrain", "finetune")
REQUIRED_KEYS = ("version", "kind", "network", "model")


@dataclass
class Checkpoint:
    kind: str
    network: dict
    model: dict
    config_hash: str = None
    optimizer: dict = None
    scheduler: dict = None
    epoch: int = 0
    step: int = 0
    rng: object = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "network": self.network,
            "config_hash": self.config_hash,
            "model": self.model,
            "optimizer": self.optimizer,
            "scheduler": self.scheduler,
            "epoch": self.epoch,
            "step": self.step,
            "rng": self.rng,
            "extra": self.extra,
        }


def save_checkpoint(checkpoint, path):
    """Saves into a temporary file first, so a crash keeps the old file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(".tmp")
    torch.save(checkpoint.to_dict(), tmp_path)
    shutil.move(str(tmp_path), str(path))
    logger.debug("Saved %s checkpoint: %s", checkpoint.kind, path)
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        data = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise IncompatibleCheckpointError(
            {}, reason=f"{path}: no such file"
        ) from None
    except (OSError, RuntimeError, pickle.UnpicklingError) as e:
        raise IncompatibleCheckpointError(
            {}, reason=f"{path}: unreadable ({e})"
        ) from None

    if not isinstance(data, dict):
        raise IncompatibleCheckpointError(
            {}, reason=f"{path}: not a checkpoint container"
        )
    missing = [key for key in REQUIRED_KEYS if key not in data]
    if missing:
        raise IncompatibleCheckpointError(
            {"missing": missing}, reason=str(path)
        )
    if data["version"] != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            {
                "mismatched": [
                    f"version: {data['version']!r} != {CHECKPOINT_VERSION}"
                ]
            },
            reason=str(path),
        )
    if data["kind"] not in CHECKPOINT_KINDS:
        raise IncompatibleCheckpointError(
            {"mismatched": [f"kind: {data['kind']!r}"]}, reason=str(path)
        )

    logger.debug("Loaded %s checkpoint: %s", data["kind"], path)
    return Checkpoint(
        kind=data["kind"],
        network=data["network"],
        model=data["model"],
        config_hash=data.get("config_hash"),
        optimizer=data.get("optimizer"),
        scheduler=data.get("scheduler"),
        epoch=data.get("epoch", 0),
        step=data.get("step", 0),
        rng=data.get("rng"),
        extra=data.get("extra") or {},
    )
