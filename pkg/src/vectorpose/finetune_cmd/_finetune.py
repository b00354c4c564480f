"""
Supervised fine-tuning of the transferred encoder-decoder.

Loss is voxel-wise cross-entropy plus soft Dice. After every eval_every
epochs the full test volumes are segmented tile by tile and scored with the
mean foreground Dice; the best epoch's weights are kept.
"""

from dataclasses import dataclass, field
from pathlib import Path
import csv
import itertools
import logging
import math

import numpy as np
import torch
from torch.utils.data import Dataset

from ..errors import (
    ConfigError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
)
from ..lib.augment import apply_finetune_augment
from ..lib.checkpoint import save_checkpoint
from ..lib.losses import segmentation_loss
from ..lib.metrics import MetricRecord
from ..lib.network import (
    SegmentationNet,
    backbone_config_diff,
    transfer_weights,
)
from ..lib.seeding import rng_for, seed_everything, seed_for
from ..lib.training import (
    Stopwatch,
    check_finite,
    check_schedule,
    make_loader,
    make_train_state,
)
from ..lib.volume import sample_crop

__all__ = [
    "ALLOWED_FRACTIONS",
    "FinetuneConfig",
    "DiceResult",
    "RunAggregate",
    "FinetuneRun",
    "SegmentationDataset",
    "select_training_subset",
    "dice_score",
    "predict_volume",
    "evaluate_cases",
    "summarize_dice",
    "finetune",
    "aggregate_runs",
    "load_segmentation_model",
    "write_runs_table",
    "write_dice_table",
]

logger = logging.getLogger(__name__)

ALLOWED_FRACTIONS = (0.1, 0.25, 0.5, 1.0)


@dataclass
class FinetuneConfig:
    epochs: int = 200
    batch_size: int = 4
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    crop_extents: tuple = (64, 128, 128)
    # fraction of labeled training volumes
    fraction: float = 1.0
    # fractions outside ALLOWED_FRACTIONS are rejected unless set
    any_fraction: bool = False
    runs: int = 8
    crops_per_volume: int = 4
    schedule: str = "constant"
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        def check(condition, key, reason):
            if not condition:
                raise ConfigError(key, reason)

        for name in ("epochs", "batch_size", "runs", "crops_per_volume"):
            value = getattr(self, name)
            check(value >= 1, name, f"should be positive, given: {value!r}")
        check(
            self.eval_every >= 1,
            "eval_every",
            f"should be positive, given: {self.eval_every!r}",
        )
        check(
            self.learning_rate > 0,
            "learning_rate",
            f"should be positive, given: {self.learning_rate!r}",
        )
        check(
            self.weight_decay >= 0,
            "weight_decay",
            f"should be non-negative, given: {self.weight_decay!r}",
        )
        check(
            len(self.crop_extents) == 3 and min(self.crop_extents) >= 1,
            "crop_extents",
            f"should be 3 positive extents, given: {self.crop_extents!r}",
        )
        check(
            0 < self.fraction <= 1,
            "fraction",
            f"should be in (0, 1], given: {self.fraction!r}",
        )
        check(
            self.any_fraction
            or any(math.isclose(self.fraction, f) for f in ALLOWED_FRACTIONS),
            "fraction",
            f"should be one of {ALLOWED_FRACTIONS} (or set any_fraction), "
            f"given: {self.fraction!r}",
        )
        check_schedule(self.schedule)


def select_training_subset(cases, fraction, rng=None):
    """
    floor(fraction * len(cases)) cases: the leading ones of a permutation
    drawn from rng, or of the given order without rng.
    """
    # tolerance for products like 0.1 * 30 = 3.0000000000000004
    count = math.floor(fraction * len(cases) + 1e-9)
    if count < 1:
        raise InvalidArgumentError(
            f"Label fraction {fraction!r} of {len(cases)} volumes selects "
            "no training volume"
        )
    order = np.arange(len(cases))
    if rng is not None:
        order = rng.permutation(len(cases))
    return [cases[i] for i in sorted(order[:count])]


@dataclass
class DiceResult:
    # per foreground class 1..C-1, None when absent from both label maps
    per_class: list
    mean: float


def dice_score(prediction, target, num_classes):
    prediction = np.asarray(prediction)
    target = np.asarray(target)
    if prediction.shape != target.shape:
        raise InvalidArgumentError(
            f"Prediction extents {prediction.shape} != target extents "
            f"{target.shape}"
        )
    for name, labels in (("prediction", prediction), ("target", target)):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise InvalidArgumentError(
                f"{name} labels should be in [0, {num_classes}), given range "
                f"[{labels.min()}, {labels.max()}]"
            )

    per_class = []
    for label in range(1, num_classes):
        predicted = prediction == label
        expected = target == label
        total = int(predicted.sum()) + int(expected.sum())
        if total == 0:
            per_class.append(None)
            continue
        overlap = int(np.logical_and(predicted, expected).sum())
        per_class.append(2 * overlap / total)

    present = [d for d in per_class if d is not None]
    # nothing to segment in both maps is a perfect match
    mean = float(np.mean(present)) if present else 1.0
    return DiceResult(per_class=per_class, mean=mean)


class SegmentationDataset(Dataset):
    """
    Labeled crops with T_F applied, in a seeded order per epoch; crop k of
    epoch e draws from the stream (seed, e, k), so items don't depend on
    worker scheduling.
    """

    def __init__(self, cases, config, seed, epoch=0):
        self.cases = list(cases)
        self.config = config
        self.seed = seed
        self.crops_per_volume = config.finetune.crops_per_volume
        self.set_epoch(epoch)

    def set_epoch(self, epoch):
        self.epoch = epoch
        self._order = rng_for(self.seed, epoch).permutation(len(self))

    def __len__(self):
        return len(self.cases) * self.crops_per_volume

    def __getitem__(self, index):
        crop_index = int(self._order[index])
        case = self.cases[crop_index // self.crops_per_volume]
        data_cfg = self.config.data
        rng = rng_for(self.seed, self.epoch, crop_index)
        crop, placement = sample_crop(
            case.volume,
            self.config.finetune.crop_extents,
            data_cfg.min_informative_fraction,
            rng,
            background_threshold=data_cfg.background_threshold,
            max_retries=data_cfg.max_retries,
        )
        window = tuple(
            slice(o, o + e) for o, e in zip(placement.offset, placement.extents)
        )
        labels = case.labels[window]
        image, labels = apply_finetune_augment(
            crop, labels, self.config.augment.finetune, rng
        )
        return (
            torch.from_numpy(image[None]),
            torch.from_numpy(labels.astype(np.int64)),
        )


@torch.no_grad()
def predict_volume(model, data, tile_extents):
    """
    Label map of a whole volume: non-overlapping tiles over the volume
    padded by edge replication up to whole tiles.
    """
    model.eval()
    shape = data.shape
    tile_extents = tuple(int(t) for t in tile_extents)
    padded_shape = [math.ceil(s / t) * t for s, t in zip(shape, tile_extents)]
    padded = np.pad(
        data,
        [(0, p - s) for p, s in zip(padded_shape, shape)],
        mode="edge",
    )
    prediction = np.zeros(padded_shape, dtype=np.int64)
    starts = [range(0, p, t) for p, t in zip(padded_shape, tile_extents)]
    for start in itertools.product(*starts):
        window = tuple(slice(s, s + t) for s, t in zip(start, tile_extents))
        tile = torch.from_numpy(
            np.ascontiguousarray(padded[window], dtype=np.float32)[None, None]
        )
        prediction[window] = model(tile).argmax(dim=1)[0].numpy()
    return prediction[tuple(slice(0, s) for s in shape)]


def evaluate_cases(model, cases, num_classes, tile_extents):
    """Per-case DiceResult for the labeled cases"""
    results = []
    for case in cases:
        if case.labels is None:
            continue
        prediction = predict_volume(model, case.volume.data, tile_extents)
        results.append(dice_score(prediction, case.labels, num_classes))
    if not results:
        raise InvalidArgumentError("No labeled cases to evaluate")
    return results


def summarize_dice(results):
    """(per-class means over cases, mean over cases)"""
    per_class = []
    for values in zip(*(r.per_class for r in results)):
        present = [v for v in values if v is not None]
        per_class.append(float(np.mean(present)) if present else None)
    return per_class, float(np.mean([r.mean for r in results]))


@dataclass
class FinetuneRun:
    run: int
    seed: int
    best_dice: float
    best_epoch: int
    checkpoint: Path
    records: list = field(default_factory=list)
    manifest: object = None


def load_segmentation_model(checkpoint, network_config):
    """Fine-tuned model restored from a finetune checkpoint"""
    diff = backbone_config_diff(checkpoint.network, network_config.to_dict())
    if checkpoint.network.get("num_classes") != network_config.num_classes:
        diff.append(
            f"network.num_classes: {checkpoint.network.get('num_classes')!r}"
            f" != {network_config.num_classes!r}"
        )
    if checkpoint.kind != "finetune" or diff:
        raise IncompatibleCheckpointError(
            {"mismatched": diff or [f"kind: {checkpoint.kind!r} != 'finetune'"]}
        )
    model = SegmentationNet(network_config)
    target_keys = set(model.state_dict())
    diff = {
        "missing": sorted(target_keys - checkpoint.model.keys()),
        "unexpected": sorted(checkpoint.model.keys() - target_keys),
    }
    if any(diff.values()):
        raise IncompatibleCheckpointError(diff)
    model.load_state_dict(checkpoint.model)
    return model


def finetune(
    pretrained,
    config,
    dataset,
    out_dir,
    *,
    run=0,
    deterministic=False,
    writer=None,
    config_hash=None,
):
    """
    One fine-tuning run. pretrained is a pretrain Checkpoint or None for
    random initialization. Returns a FinetuneRun.
    """
    finetune_cfg = config.finetune
    network_cfg = config.network
    num_classes = network_cfg.num_classes
    out_dir = Path(out_dir)

    run_seed = seed_for(finetune_cfg.seed, run)
    seed_everything(run_seed, deterministic)
    model = SegmentationNet(network_cfg)

    manifest = None
    if pretrained is not None:
        diff = backbone_config_diff(pretrained.network, network_cfg.to_dict())
        if diff:
            raise IncompatibleCheckpointError({"mismatched": diff})
        manifest = transfer_weights(pretrained.model, model)

    labeled = [case for case in dataset.training if case.labels is not None]
    if not labeled:
        raise InvalidArgumentError(
            f"No labeled training cases in dataset {dataset.name!r}"
        )
    if len(labeled) < len(dataset.training):
        logger.warning(
            "Skipping %d unlabeled training volumes",
            len(dataset.training) - len(labeled),
        )
    # the subset is shared by runs and initializations
    subset = select_training_subset(
        labeled, finetune_cfg.fraction, rng_for(finetune_cfg.seed)
    )
    train_data = SegmentationDataset(subset, config, run_seed)
    loader = make_loader(
        train_data, finetune_cfg.batch_size, config.data.num_workers
    )
    state = make_train_state(
        model,
        finetune_cfg.learning_rate,
        finetune_cfg.weight_decay,
        finetune_cfg.schedule,
        finetune_cfg.epochs,
    )
    logger.info(
        "Run %d (seed %d): %s init, %d of %d training volumes",
        run,
        run_seed,
        "random" if pretrained is None else "pretrained",
        len(subset),
        len(labeled),
    )

    checkpoint_path = (
        out_dir / config.output.checkpoints_dir / f"finetune_run{run:02d}.pt"
    )
    stopwatch = Stopwatch(deterministic)
    records = []
    best_dice, best_epoch = -1.0, -1
    for epoch in range(finetune_cfg.epochs):
        train_data.set_epoch(epoch)
        model.train()
        for images, labels in loader:
            loss = segmentation_loss(model(images), labels, num_classes)
            check_finite(loss, state.step, [(run_seed, epoch, state.step)])
            state.optimizer.zero_grad(set_to_none=True)
            loss.backward()
            state.optimizer.step()
            state.step += 1
            logger.debug(
                "step %d: loss %.5f", state.step, float(loss.detach())
            )
        if state.scheduler is not None:
            state.scheduler.step()
        state.epoch = epoch + 1

        last = state.epoch == finetune_cfg.epochs
        if state.epoch % finetune_cfg.eval_every and not last:
            continue

        per_class, mean = summarize_dice(
            evaluate_cases(
                model, dataset.test, num_classes, finetune_cfg.crop_extents
            )
        )
        record = MetricRecord(
            phase="finetune",
            step=state.step,
            epoch=epoch,
            dice=per_class,
            mean_dice=mean,
            run=run,
            wall_time=stopwatch.elapsed(),
        )
        records.append(record)
        if writer is not None:
            writer.write(record)
        logger.info(
            "Run %d, epoch %d/%d: mean Dice %.4f",
            run,
            state.epoch,
            finetune_cfg.epochs,
            mean,
        )

        if mean > best_dice:
            best_dice, best_epoch = mean, epoch
            save_checkpoint(
                state.to_checkpoint(
                    "finetune",
                    network_cfg,
                    config_hash,
                    extra={"best_dice": mean, "run": run},
                ),
                checkpoint_path,
            )

    return FinetuneRun(
        run=run,
        seed=run_seed,
        best_dice=best_dice,
        best_epoch=best_epoch,
        checkpoint=checkpoint_path,
        records=records,
        manifest=manifest,
    )


@dataclass
class RunAggregate:
    mean: float
    std: float
    count: int

    def __str__(self):
        return f"{self.mean:.4f} ± {self.std:.4f} (n={self.count})"


def aggregate_runs(values):
    """Mean and population standard deviation of per-run best Dice"""
    values = [getattr(v, "best_dice", v) for v in values]
    if not values:
        raise InvalidArgumentError("Nothing to aggregate")
    return RunAggregate(
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        count=len(values),
    )


def write_runs_table(path, runs, init):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    aggregate = aggregate_runs(runs)
    with path.open("w", encoding="utf-8", newline="") as f:
        out = csv.writer(f)
        out.writerow(["init", "run", "seed", "best_epoch", "best_dice"])
        for r in runs:
            out.writerow([init, r.run, r.seed, r.best_epoch, repr(r.best_dice)])
        out.writerow([init, "mean", "", "", repr(aggregate.mean)])
        out.writerow([init, "std", "", "", repr(aggregate.std)])
    return path


def write_dice_table(path, cases, results, class_names):
    """Per case and per foreground class Dice"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labeled = [c for c in cases if c.labels is not None]
    with path.open("w", encoding="utf-8", newline="") as f:
        out = csv.writer(f)
        out.writerow(["case", "class", "name", "dice"])
        for case, result in zip(labeled, results):
            for label, value in enumerate(result.per_class, start=1):
                out.writerow(
                    [
                        case.volume.name,
                        label,
                        class_names.get(label, ""),
                        "" if value is None else repr(value),
                    ]
                )
            out.writerow([case.volume.name, "mean", "", repr(result.mean)])
    return path
