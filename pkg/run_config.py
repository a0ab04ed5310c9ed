"""Run configuration: dataclass defaults, JSON config files, environment and flags.

Precedence from lowest to highest: defaults, the JSON config file, command
line flags. A flag only overrides when it was given explicitly.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

from data_io import cube_paths, default_labels_path
from errors import ConfigError
from linear_model import TrainConfig
from rank1_fnn import HIDDEN_PRESETS

logger = logging.getLogger(__name__)

MODEL_TYPES = ("tensor_lr", "rank1_fnn", "vector_lr", "dense_fnn")
DEFAULT_WINDOW = 5
DEFAULT_HIDDEN = HIDDEN_PRESETS["indian_pines"]
THREADS_ENV = "HSTC_THREADS"


def env_int(name: str, default: int) -> int:
    """Integer from the environment, falling back to ``default`` when unset or invalid."""
    val = os.getenv(name)
    if val is None or not val.strip():
        return default
    try:
        return int(val)
    except ValueError:
        logger.warning("Ignoring non-integer %s=%r", name, val)
        return default


def worker_count() -> int:
    """Thread cap for per-pixel prediction from ``HSTC_THREADS`` (default 1)."""
    return max(1, env_int(THREADS_ENV, 1))


def resolve_hidden(value: Union[int, str]) -> int:
    """Hidden-layer size from an integer or a preset name (``pavia``, ``indian_pines``)."""
    if isinstance(value, str):
        if value in HIDDEN_PRESETS:
            return HIDDEN_PRESETS[value]
        try:
            return int(value)
        except ValueError:
            raise ConfigError(
                f"hidden size must be an integer or one of {sorted(HIDDEN_PRESETS)}, got {value!r}"
            ) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not float(value).is_integer():
        raise ConfigError(f"hidden size must be an integer, got {value!r}")
    return int(value)


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def coerce_field(key: str, value, type_name: str):
    """Convert a config value to the field's declared type or raise ``ConfigError``."""
    base = type_name[len("Optional["):-1] if type_name.startswith("Optional[") else type_name
    if base == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in _BOOL_WORDS:
            return _BOOL_WORDS[value.strip().lower()]
    elif base == "int":
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, (int, str)) and not isinstance(value, bool):
            try:
                return int(value)
            except ValueError:
                pass
    elif base == "float":
        if isinstance(value, (int, float, str)) and not isinstance(value, bool):
            try:
                return float(value)
            except ValueError:
                pass
    elif isinstance(value, (str, os.PathLike)):
        return str(value)
    raise ConfigError(f"configuration key {key!r} must be {base}, got {value!r}")


@dataclass
class RunConfig:
    cube: Optional[str] = None
    labels: Optional[str] = None
    model_type: str = "tensor_lr"
    window: int = DEFAULT_WINDOW
    hidden: int = DEFAULT_HIDDEN
    samples_per_class: int = 50
    train_fraction: Optional[float] = None
    out_dir: str = "runs"
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def labels_path(self) -> Optional[Path]:
        if self.labels:
            return Path(self.labels)
        return default_labels_path(self.cube) if self.cube else None

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if self.model_type not in MODEL_TYPES:
            raise ConfigError(f"model type must be one of {MODEL_TYPES}, got {self.model_type!r}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be a positive odd integer, got {self.window}")
        if self.hidden < 1:
            raise ConfigError(f"hidden size must be >= 1, got {self.hidden}")
        if self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.train_fraction is not None and not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        self.train.validate()
        if check_paths:
            if not self.cube:
                raise ConfigError("no cube path given")
            for path in cube_paths(self.cube) + (self.labels_path,):
                if not Path(path).exists():
                    raise ConfigError(f"input file not found: {path}")
        return self

    def with_overrides(self, values: dict) -> "RunConfig":
        """Apply flat ``{field: value}`` pairs; ``None`` values are ignored."""
        run_types = {f.name: f.type for f in fields(self) if f.name != "train"}
        train_types = {f.name: f.type for f in fields(TrainConfig)}
        run_changes, train_changes = {}, {}
        for key, value in values.items():
            if value is None:
                continue
            if key == "hidden":
                run_changes[key] = resolve_hidden(value)
            elif key in run_types:
                run_changes[key] = coerce_field(key, value, run_types[key])
            elif key in train_types:
                train_changes[key] = coerce_field(key, value, train_types[key])
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        updated = replace(self, **run_changes)
        updated.train = self.train.updated(**train_changes)
        return updated

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.update(doc.pop("train"))
        return doc


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def build_run_config(config_path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge defaults, an optional JSON file and explicit overrides."""
    cfg = RunConfig()
    if config_path:
        cfg = cfg.with_overrides(load_config_file(config_path))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


__all__ = [
    "MODEL_TYPES",
    "RunConfig",
    "env_int",
    "worker_count",
    "resolve_hidden",
    "coerce_field",
    "load_config_file",
    "build_run_config",
]
