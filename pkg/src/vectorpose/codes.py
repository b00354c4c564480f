from enum import IntEnum


class ExitCodes(IntEnum):
    OK = 0
    # e.g. evaluate: nothing to evaluate
    FAILURE = 1
    # this program usage error or invalid run config
    CONFIG_ERROR = 2
    # non-finite loss during training
    DIVERGED = 3
    # checkpoint doesn't match the network config
    CHECKPOINT_ERROR = 4
    # internal error
    INTERNAL_ERROR = 5
