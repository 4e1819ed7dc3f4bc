"""Layered run configuration: file -> environment -> command-line overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig

ENV_PREFIX = "SLIDEGENE_"


@dataclass
class DataConfig:
    dataset: str = ""
    out: str = ""
    workers: int = 0  # 0 = all available cores

    def validate(self):
        if self.workers < 0:
            raise ConfigError(f"workers must be >= 0, got {self.workers}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.data.validate()

    def to_dict(self) -> dict:
        out = {}
        for section in fields(self):
            sub = dataclasses.asdict(getattr(self, section.name))
            out[section.name] = {
                k: list(v) if isinstance(v, tuple) else v for k, v in sub.items()
            }
        return out

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _coerce(raw, current):
    """Parse a string override into the type of the field it replaces."""
    if isinstance(current, tuple) and isinstance(raw, (list, tuple)):
        return tuple(int(p) for p in raw)
    if not isinstance(raw, str):
        return raw
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(int(p) for p in parts)
    return raw


def _set_key(config: RunConfig, section: str, key: str, value):
    if not hasattr(config, section):
        raise ConfigError(f"unknown config section {section!r}")
    target = getattr(config, section)
    names = {f.name for f in fields(target)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in section {section!r}")
    setattr(target, key, _coerce(value, getattr(target, key)))


def from_mapping(raw: dict) -> RunConfig:
    """Build a RunConfig from nested mappings, rejecting unknown keys."""
    config = RunConfig()
    if raw is None:
        return config
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    known_sections = {f.name for f in fields(config)}
    for section, body in raw.items():
        if section not in known_sections:
            raise ConfigError(f"unknown config section {section!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in body.items():
            _set_key(config, section, key, value)
    return config


def load_config(path: str) -> RunConfig:
    """Load YAML or JSON (a YAML subset) into a validated-shape RunConfig."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: cannot parse: {exc}") from exc
    return from_mapping(raw)


def apply_env(config: RunConfig, environ=None) -> RunConfig:
    """Apply SLIDEGENE_<SECTION>_<KEY> environment overrides in place."""
    environ = os.environ if environ is None else environ
    sections = {f.name for f in fields(config)}
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        if "_" not in rest:
            raise ConfigError(f"{name}: expected {ENV_PREFIX}<SECTION>_<KEY>")
        section, key = rest.split("_", 1)
        section = section.lower()
        key = key.lower()
        if section not in sections:
            raise ConfigError(f"{name}: unknown section {section!r}")
        _set_key(config, section, key, value)
    return config


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply `section.key=value` strings (the --set flag) in place."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        _set_key(config, section.strip(), key.strip(), value.strip())
    return config


def resolve(
    path: str | None = None,
    overrides: list[str] | None = None,
    environ=None,
) -> RunConfig:
    """File, then environment, then explicit overrides; validates the result."""
    config = load_config(path) if path else RunConfig()
    apply_env(config, environ)
    if overrides:
        apply_overrides(config, overrides)
    config.validate()
    return config
