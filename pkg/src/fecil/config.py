"""Flat key-value run configuration with dotted section names.

Files hold one `section.key = value` assignment per line; values are
quoted strings, bare words, booleans, ints, or floats. Comments start
with #. Every training hyperparameter has a key, with defaults matching
the full-scale recipe unless a file overrides them.
"""

from __future__ import annotations

from .networks import BackboneConfig  # noqa: F401  (re-export for config consumers)
from .training import RunConfig, TrainConfig


class ConfigError(ValueError):
    pass


def _parse_value(raw, lineno, key):
    raw = raw.strip()
    if raw.startswith('"'):
        end = raw.find('"', 1)
        if end < 0:
            raise ConfigError(f"line {lineno}: unterminated string for key {key!r}")
        rest = raw[end + 1:].strip()
        if rest and not rest.startswith("#"):
            raise ConfigError(f"line {lineno}: trailing text {rest!r} after string for {key!r}")
        return raw[1:end]
    raw = raw.split("#", 1)[0].strip()
    if raw == "":
        raise ConfigError(f"line {lineno}: missing value for key {key!r}")
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(raw, lineno, key)
    return values


# config key -> (attribute path, expected type)
_KEYS = {
    "run.seed": ("seed", int),
    "dataset.kind": ("dataset_kind", str),
    "dataset.path": ("dataset_path", str),
    "dataset.seed": ("dataset_seed", int),
    "dataset.num_classes": ("num_classes", int),
    "dataset.per_class": ("per_class", int),
    "dataset.image_side": ("image_side", int),
    "dataset.test_per_class": ("test_per_class", int),
    "protocol.name": ("protocol", str),
    "protocol.steps": ("steps", int),
    "protocol.seed": ("protocol_seed", int),
    "memory.mode": ("memory_mode", str),
    "memory.value": ("memory_value", int),
    "backbone.width": ("backbone_width", int),
    "backbone.blocks_per_stage": ("blocks_per_stage", int),
    "train.epochs_expand": ("train.epochs_expand", int),
    "train.epochs_compress": ("train.epochs_compress", int),
    "train.base_lr": ("train.base_lr", float),
    "train.batch_size": ("train.batch_size", int),
    "train.momentum": ("train.momentum", float),
    "train.weight_decay": ("train.weight_decay", float),
    "train.tau": ("train.tau", float),
    "train.alpha": ("train.alpha", float),
    "train.compress_aug": ("train.compress_aug", str),
    "train.ce_weight_in_compression": ("train.ce_weight_in_compression", float),
    "train.crop_flip": ("train.crop_flip", bool),
    "train.debug_checks": ("train.debug_checks", bool),
}


def build_run_config(values: dict) -> RunConfig:
    run_kwargs = {}
    train_kwargs = {}
    for key, value in values.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, want = _KEYS[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or isinstance(value, bool) != (want is bool):
            raise ConfigError(f"key {key!r}: expected {want.__name__}, got {value!r}")
        if attr.startswith("train."):
            train_kwargs[attr.split(".", 1)[1]] = value
        else:
            run_kwargs[attr] = value
    try:
        return RunConfig(train=TrainConfig(**train_kwargs), **run_kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        return build_run_config(parse_config_text(text))
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e
