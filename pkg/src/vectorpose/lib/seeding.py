import logging
import os
import random

import numpy as np
import torch

__all__ = ["seed_everything", "rng_for", "seed_for"]

logger = logging.getLogger(__name__)


def seed_everything(seed, deterministic=False):
    """Seeds global RNGs and optionally switches torch to deterministic mode"""
    logger.debug("Global seed: %d, deterministic: %s", seed, deterministic)
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)

    if deterministic:
        # required by cuBLAS for deterministic matmuls
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True)
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False
    else:
        torch.use_deterministic_algorithms(False)


def _entropy(seed, keys):
    return [int(seed)] + [int(k) for k in keys]


def rng_for(seed, *keys):
    """
    Independent numpy Generator for (seed, *keys), e.g.
    (global seed, epoch, crop index). Streams don't depend on the order or
    the process they are requested in.
    """
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, keys)))


def seed_for(seed, *keys):
    """32 bit integer seed derived the same way as rng_for"""
    state = np.random.SeedSequence(_entropy(seed, keys)).generate_state(1)
    return int(state[0])
