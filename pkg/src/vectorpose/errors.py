class VectorPoseError(Exception):
    """Base error of this package"""


class InvalidArgumentError(VectorPoseError, ValueError):
    """Argument is outside of the operation's domain"""


class UnsupportedTransformError(InvalidArgumentError):
    """Spatial transform is outside of the supported cube symmetry group"""


class VolumeIOError(VectorPoseError, OSError):
    """Volume file can't be read or written"""

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class ConfigError(VectorPoseError):
    """Wrong format or data of run config"""

    def __init__(self, key, reason):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}" if key else reason)


class DivergedTrainingError(VectorPoseError):
    """Loss became non-finite"""

    def __init__(self, message, seeds):
        self.seeds = list(seeds)
        super().__init__(f"{message} (batch seeds: {self.seeds})")


class IncompatibleCheckpointError(VectorPoseError):
    """Checkpoint parameters don't match the network"""

    def __init__(self, diff, reason=None):
        self.diff = diff
        header = "Incompatible checkpoint"
        lines = [f"{header}: {reason}" if reason else f"{header}:"]
        for field_name in ("missing", "unexpected", "mismatched"):
            for entry in diff.get(field_name, ()):
                lines.append(f"  {field_name}: {entry}")
        super().__init__("\n".join(lines))
