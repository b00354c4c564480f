"""
Labeled volume collections split into training and test cases.

A dataset directory holds an index file:

    dataset.json
    {
        "name": "...",
        "labels": {"0": "background", "1": "liver", ...},
        "training": [{"image": "images/a.nii.gz", "label": "labels/a.nii.gz"}],
        "test": [...]
    }

Paths are relative to the directory. "label" may be omitted for unlabeled
(pretraining only) cases.
"""

from dataclasses import dataclass, field
from pathlib import Path
import json
import logging

import numpy as np

from ..errors import ConfigError, VolumeIOError
from .phantom import DEFAULT_ORGANS, generate_phantoms
from .volume import Volume, normalize, load_volume, save_volume

__all__ = [
    "Case",
    "Dataset",
    "DATASET_INDEX",
    "PHANTOM_SOURCE",
    "load_dataset",
    "write_dataset",
    "phantom_class_names",
    "phantom_dataset",
]

logger = logging.getLogger(__name__)

DATASET_INDEX = "dataset.json"
PHANTOM_SOURCE = "phantom"


@dataclass
class Case:
    volume: object
    labels: np.ndarray = None


@dataclass
class Dataset:
    name: str
    training: list
    test: list = field(default_factory=list)
    class_names: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.class_names) if self.class_names else None


def phantom_class_names():
    names = {0: "background"}
    for label, (name, *_) in enumerate(DEFAULT_ORGANS, start=1):
        names[label] = name
    return names


def phantom_dataset(config):
    """Raw phantoms of a VolumeDataConfig, not normalized"""
    shape = tuple(config.phantom_shape)
    training = generate_phantoms(
        config.phantom_count, shape, config.phantom_seed
    )
    test = generate_phantoms(
        config.phantom_test_count,
        shape,
        config.phantom_seed,
        start=config.phantom_count,
    )
    return Dataset(
        name=PHANTOM_SOURCE,
        training=[Case(v, labels) for v, labels in training],
        test=[Case(v, labels) for v, labels in test],
        class_names=phantom_class_names(),
    )


def _read_index(directory):
    index_path = directory / DATASET_INDEX
    try:
        with index_path.open(encoding="utf-8") as f:
            index = json.load(f)
    except FileNotFoundError:
        raise ConfigError(
            "data.source", f"missing dataset index: {index_path}"
        ) from None
    except json.JSONDecodeError:
        raise ConfigError(
            "data.source", f"invalid dataset index: {index_path}"
        ) from None

    if not isinstance(index, dict) or "training" not in index:
        raise ConfigError(
            "data.source", f"dataset index has no 'training' list: {index_path}"
        )
    return index


def _load_case(directory, entry):
    if not isinstance(entry, dict) or "image" not in entry:
        raise VolumeIOError(
            directory / DATASET_INDEX, f"invalid case: {entry!r}"
        )
    volume = load_volume(directory / entry["image"])
    labels = None
    if entry.get("label") is not None:
        label_volume = load_volume(directory / entry["label"])
        if label_volume.shape != volume.shape:
            raise VolumeIOError(
                directory / entry["label"],
                f"label shape {label_volume.shape} != image shape "
                f"{volume.shape}",
            )
        labels = np.rint(label_volume.data).astype(np.uint8)
    return Case(volume, labels)


def load_dataset(config):
    """
    Dataset described by a VolumeDataConfig, intensity-normalized.
    Phantoms are generated in memory.
    """
    if config.source == PHANTOM_SOURCE:
        dataset = phantom_dataset(config)
    else:
        directory = Path(config.source)
        index = _read_index(directory)
        dataset = Dataset(
            name=index.get("name", directory.name),
            training=[_load_case(directory, e) for e in index["training"]],
            test=[_load_case(directory, e) for e in index.get("test", [])],
            class_names={
                int(k): v for k, v in index.get("labels", {}).items()
            },
        )

    for case in dataset.training + dataset.test:
        case.volume = normalize(
            case.volume, config.clip_lo_pct, config.clip_hi_pct
        )
    logger.info(
        "Dataset %s: %d training, %d test volumes",
        dataset.name,
        len(dataset.training),
        len(dataset.test),
    )
    return dataset


def write_dataset(directory, dataset, suffix=".nii.gz"):
    """Writes images, labels and the index file into directory"""
    directory = Path(directory)
    index = {
        "name": dataset.name,
        "labels": {str(k): v for k, v in sorted(dataset.class_names.items())},
    }
    for split in ("training", "test"):
        entries = []
        for case in getattr(dataset, split):
            name = case.volume.name
            entry = {"image": f"images/{name}{suffix}"}
            save_volume(case.volume, directory / entry["image"])
            if case.labels is not None:
                entry["label"] = f"labels/{name}{suffix}"
                label_volume = Volume(
                    data=case.labels,
                    spacing=case.volume.spacing,
                    name=name,
                )
                save_volume(label_volume, directory / entry["label"], np.uint8)
            entries.append(entry)
        index[split] = entries

    index_path = directory / DATASET_INDEX
    index_path.write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info("Dataset index: %s", index_path)
    return index_path
