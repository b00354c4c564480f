"""
JSON run configuration.

Sections map onto the config dataclasses of the modules owning them, with
the dataclass defaults being the documented defaults:

    data      VolumeDataConfig
    augment   AugmentConfig (spatial, intensity, finetune)
    network   NetworkConfig
    pretrain  PretrainConfig
    finetune  FinetuneConfig
    output    OutputConfig

Unknown sections and keys are rejected, errors name the dotted key.
"""

from copy import deepcopy
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
import hashlib
import json
import logging
import os

from .errors import ConfigError
from .finetune_cmd import FinetuneConfig
from .lib.augment import AugmentConfig
from .lib.network import NetworkConfig
from .lib.volume import VolumeDataConfig
from .pretrain_cmd import PretrainConfig

__all__ = [
    "OutputConfig",
    "RunConfig",
    "CONFIG_NAME",
    "HASH_KEY",
    "NUM_WORKERS_ENV",
    "load_config",
    "apply_overrides",
]

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.json"
HASH_KEY = "config_hash"
NUM_WORKERS_ENV = "VECTORPOSE_NUM_WORKERS"

# config keys that are Python keywords
KEY_ALIASES = {"lambda_": "lambda"}


@dataclass
class OutputConfig:
    metrics_file: str = "metrics.jsonl"
    checkpoints_dir: str = "checkpoints"
    tables_dir: str = "tables"
    figures_dir: str = "figures"
    save_figures: bool = True

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is str and (not value or Path(value).is_absolute()):
                raise ConfigError(
                    f.name, f"should be a relative path, given: {value!r}"
                )


def _config_key(f):
    return KEY_ALIASES.get(f.name, f.name)


def _join(prefix, key):
    return f"{prefix}.{key}" if prefix else key


def _convert_scalar(value, expected, key):
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif expected is str:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(
            key, f"should be {expected.__name__}, given: {value!r}"
        )
    return value


def _convert(value, f, key):
    if f.type is tuple:
        default = f.default
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(
                key, f"should be a list of {len(default)}, given: {value!r}"
            )
        return tuple(
            _convert_scalar(v, type(d), f"{key}[{i}]")
            for i, (v, d) in enumerate(zip(value, default))
        )
    if f.type is object:
        # free-form, validated by the owning dataclass
        return tuple(value) if isinstance(value, list) else value
    return _convert_scalar(value, f.type, key)


def _from_dict(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(
            prefix, f"should be a dict, given: {data!r}"
        )
    by_key = {_config_key(f): f for f in fields(cls)}
    unknown = sorted(set(data) - set(by_key))
    if unknown:
        raise ConfigError(_join(prefix, unknown[0]), "unknown key")

    kwargs = {}
    for key, value in data.items():
        f = by_key[key]
        dotted = _join(prefix, key)
        if is_dataclass(f.type):
            kwargs[f.name] = _from_dict(f.type, value, dotted)
        else:
            kwargs[f.name] = _convert(value, f, dotted)
    try:
        return cls(**kwargs)
    except ConfigError as e:
        if prefix and e.key:
            raise ConfigError(_join(prefix, e.key), e.reason) from None
        raise


def _to_dict(obj):
    result = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            value = _to_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        result[_config_key(f)] = value
    return result


def apply_overrides(data, overrides):
    """
    Applies "section.key=value" overrides onto a config dict. Values are
    parsed as JSON, falling back to the raw string.
    """
    data = deepcopy(data)
    for override in overrides:
        path, sep, raw = override.partition("=")
        if not sep or not path:
            raise ConfigError(
                "--set", f"should be section.key=value, given: {override!r}"
            )
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw

        *parents, leaf = path.split(".")
        node = data
        for index, parent in enumerate(parents):
            node = node.setdefault(parent, {})
            if not isinstance(node, dict):
                raise ConfigError(
                    ".".join(parents[: index + 1]), "is not a section"
                )
        node[leaf] = value
        logger.debug("Config override: %s = %r", path, value)
    return data


@dataclass
class RunConfig:
    data: VolumeDataConfig = field(default_factory=VolumeDataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, data):
        data = dict(data) if isinstance(data, dict) else data
        if isinstance(data, dict):
            # echoed configs carry their hash
            data.pop(HASH_KEY, None)
        return _from_dict(cls, data, prefix="")

    def to_dict(self):
        return _to_dict(self)

    @property
    def config_hash(self):
        canonical = json.dumps(
            self.to_dict(), sort_keys=True, separators=(",", ":")
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_json(self):
        data = self.to_dict()
        data[HASH_KEY] = self.config_hash
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    def save(self, out_dir):
        """Echoes the resolved config into out_dir"""
        path = Path(out_dir) / CONFIG_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        logger.info("Resolved config: %s (hash %s)", path, self.config_hash)
        return path


def _read_file(path):
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(None, f"Missing config file: {path}") from None
    except OSError as e:
        raise ConfigError(
            None, f"Unable to read config file {path}: {e.strerror}"
        ) from None
    except json.JSONDecodeError as e:
        raise ConfigError(None, f"Invalid config file {path}: {e}") from None


def load_config(path=None, overrides=(), environ=None):
    """
    Resolved RunConfig: file (or defaults), then overrides, then the
    environment.
    """
    data = {} if path is None else _read_file(path)
    if not isinstance(data, dict):
        raise ConfigError(None, f"Config should be a dict, given: {data!r}")
    data = apply_overrides(data, overrides)

    environ = os.environ if environ is None else environ
    workers = environ.get(NUM_WORKERS_ENV)
    if workers is not None:
        try:
            data.setdefault("data", {})["num_workers"] = int(workers)
        except ValueError:
            raise ConfigError(
                NUM_WORKERS_ENV, f"should be an integer, given: {workers!r}"
            ) from None

    return RunConfig.from_dict(data)
