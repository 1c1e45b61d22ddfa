"""Declarative ``key = value`` run configuration with dotted overrides.

Example file::

    [model]
    scale = 4
    attention = joint

    [growth]
    c0 = 16

    [train]
    lr0 = 1e-4

Overrides use ``section.key=value`` and are applied after the file.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .arch import ConfigError, GrowthSchedule, NetworkConfig
from .imaging import DegradationSpec
from .train import TrainConfig

SECTIONS = {
    "model": NetworkConfig,
    "growth": GrowthSchedule,
    "train": TrainConfig,
    "data": DegradationSpec,
}


@dataclass
class RunConfig:
    model: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DegradationSpec = field(default_factory=DegradationSpec)
    source_text: str = ""


def _coerce(raw: str, default: Any, key: str) -> Any:
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _defaults(cls) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def parse_assignments(pairs: Iterable[tuple[str, str, str]]) -> dict[str, dict[str, Any]]:
    """(section, key, raw value) triples -> typed values per section."""
    values: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    for section, key, raw in pairs:
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        defaults = _defaults(SECTIONS[section])
        if key not in defaults or key == "growth":
            raise ConfigError(f"unknown config key {section}.{key}")
        values[section][key] = _coerce(raw, defaults[key], f"{section}.{key}")
    return values


def split_override(text: str) -> tuple[str, str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    lhs, raw = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override key {lhs!r} must be dotted (section.key)")
    section, key = lhs.strip().split(".", 1)
    return section, key, raw


def load_run_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    triples: list[tuple[str, str, str]] = []
    text = ""
    if path is not None:
        text = Path(path).read_text()
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        for section in parser.sections():
            triples += [(section, k, v) for k, v in parser.items(section)]
    triples += [split_override(o) for o in overrides]
    values = parse_assignments(triples)
    try:
        growth = GrowthSchedule(**values["growth"])
        model = NetworkConfig(growth=growth, **values["model"]).validate()
        train = TrainConfig(**values["train"])
        data_values = {"scale": model.scale, **values["data"]}
        data = DegradationSpec(**data_values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(model, train, data, text)
