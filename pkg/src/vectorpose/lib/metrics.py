from dataclasses import asdict, dataclass
from pathlib import Path
import json
import logging
import threading

__all__ = ["MetricRecord", "MetricsWriter", "read_metrics"]

logger = logging.getLogger(__name__)


@dataclass
class MetricRecord:
    phase: str
    step: int
    epoch: int
    l_total: float = None
    l_vp: float = None
    l_bfr: float = None
    # foreground classes, None for classes absent from both label maps
    dice: list = None
    mean_dice: float = None
    run: int = None
    # None in deterministic mode to keep metric files comparable
    wall_time: float = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


class MetricsWriter:
    """One JSON object per line, serialized across threads"""

    def __init__(self, path, append=False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._file = self.path.open("a" if append else "w", encoding="utf-8")

    def write(self, record):
        line = json.dumps(record.to_dict(), sort_keys=True)
        with self._lock:
            self._file.write(line + "\n")
            self._file.flush()

    def close(self):
        with self._lock:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    with Path(path).open(encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
