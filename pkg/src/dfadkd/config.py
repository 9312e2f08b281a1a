"""Experiment configuration: a flat, typed JSON object validated before any run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from dfadkd.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig(TrainConfig):
    # dataset
    n_classes: int = 10
    image_size: int = 16
    n_train: int = 5000
    n_test: int = 1000
    data_noise: float = 0.5
    # models
    teacher_width: int = 16
    student_width: int = 4
    depth: int = 3
    generator_channels: tuple = (512, 256, 128, 64)
    # teacher pre-training
    teacher_epochs: int = 8
    teacher_lr: float = 0.05
    teacher_batch_size: int = 64
    # quantization
    weight_bits: int = 8
    activation_bits: int = 8
    calib_batches: int = 8
    qat_lr_student: float = 1e-3
    qat_epochs: int = 10
    # paths
    data_dir: str = ""
    teacher_path: str = ""
    generator_path: str = ""
    eval_checkpoint: str = ""
    n_dump_samples: int = 64

    def validate(self):
        super().validate()
        bad = []
        if self.image_size % 8:
            bad.append("image_size")
        if self.n_classes < 2:
            bad.append("n_classes")
        if len(self.generator_channels) != 4:
            bad.append("generator_channels")
        for key in ("weight_bits", "activation_bits"):
            if not 2 <= getattr(self, key) <= 8:
                bad.append(key)
        if bad:
            raise ConfigError(f"invalid config values: {', '.join(bad)}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.field_names()})

    def to_dict(self):
        d = asdict(self)
        d["generator_channels"] = list(self.generator_channels)
        return d


def _coerce(name, ftype, value):
    """Check/convert one JSON value against the field's declared type."""
    if ftype in ("bool", bool):
        if isinstance(value, bool):
            return value
    elif ftype in ("int", int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif ftype in ("float", float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif ftype in ("str", str):
        if isinstance(value, str):
            return value
    elif ftype in ("tuple", tuple):
        if isinstance(value, (list, tuple)) and all(isinstance(v, int) for v in value):
            return tuple(value)
    raise ConfigError(f"config key {name!r} expects {ftype}, got {value!r}")


def _parse_override(ftype, text):
    if ftype == "bool":
        if text.lower() not in ("true", "false"):
            raise ValueError(text)
        return text.lower() == "true"
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    if ftype == "tuple":
        return tuple(int(t) for t in text.split(",") if t)
    return text


def build_config(values: dict) -> ExperimentConfig:
    """Validate a flat mapping into an :class:`ExperimentConfig`; unknown keys are errors."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    bad, clean = [], {}
    for k, v in values.items():
        try:
            clean[k] = _coerce(k, types[k], v)
        except ConfigError:
            bad.append(k)
    if bad:
        raise ConfigError(f"config keys with wrong types: {', '.join(sorted(bad))}")
    try:
        return ExperimentConfig(**clean)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides=(), seed=None) -> ExperimentConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            values = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"config file {p} must hold a flat object")
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    bad = []
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or key not in types:
            bad.append(key or item)
            continue
        try:
            values[key] = _parse_override(types[key], text)
        except ValueError:
            bad.append(key)
    if bad:
        raise ConfigError(f"invalid overrides: {', '.join(bad)}")
    if seed is not None:
        values["seed"] = seed
    return build_config(values)


def save_resolved(path, config: ExperimentConfig):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
