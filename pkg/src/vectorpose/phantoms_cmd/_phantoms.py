from pathlib import Path
import logging

from ..lib.dataset import phantom_dataset, write_dataset

__all__ = ["make_phantoms"]

logger = logging.getLogger(__name__)


def make_phantoms(config, out_dir, suffix=".nii.gz"):
    """
    Writes the phantom set of a VolumeDataConfig as a dataset directory,
    loadable later with data.source = out_dir.
    """
    out_dir = Path(out_dir)
    dataset = phantom_dataset(config)
    logger.info(
        "Writing %d training and %d test phantoms into %s",
        len(dataset.training),
        len(dataset.test),
        out_dir,
    )
    return write_dataset(out_dir, dataset, suffix=suffix)
