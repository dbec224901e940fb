"""Experiment configuration files.

A run is described by one JSON object with three optional sections::

    {
      "out_dir": "runs/demo",
      "generator": { ... synthdata.GenConfig fields ... },
      "training":  { ... training.TrainConfig fields ... }
    }

Every field has a default, unknown keys are rejected with the offending
line number, and parse -> serialize -> parse is the identity.  The
machine-readable field list lives in ``config.schema.json`` at the
repository root.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .exceptions import ConfigError
from .synthdata import GenConfig
from .training import TrainConfig


@dataclass
class ExperimentConfig:
    out_dir: str = "runs"
    generator: GenConfig = field(default_factory=GenConfig)
    training: TrainConfig = field(default_factory=TrainConfig)


def _key_line(text: str, key: str):
    """1-based line of the first occurrence of a quoted key, if any."""
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def _check_keys(section_name: str, data: dict, allowed, text: str):
    for key in data:
        if key in allowed:
            continue
        line = _key_line(text, key)
        where = f" (line {line})" if line is not None else ""
        raise ConfigError(
            f"unknown key {key!r} in {section_name}{where}; "
            f"expected one of: {', '.join(sorted(allowed))}"
        )


def _build_section(section_name: str, cls, data, text: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{section_name} must be a JSON object, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section_name, data, allowed, text)
    kwargs = dict(data)
    if "head_hidden" in kwargs and isinstance(kwargs["head_hidden"], list):
        kwargs["head_hidden"] = tuple(kwargs["head_hidden"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in {section_name}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON experiment description; all sections optional."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"top level must be a JSON object, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    _check_keys("top level", data, allowed, text)
    out_dir = data.get("out_dir", "runs")
    if not isinstance(out_dir, str):
        raise ConfigError(f"out_dir must be a string, got {type(out_dir).__name__}")
    return ExperimentConfig(
        out_dir=out_dir,
        generator=_build_section("generator", GenConfig, data.get("generator", {}), text),
        training=_build_section("training", TrainConfig, data.get("training", {}), text),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(config: ExperimentConfig) -> str:
    """JSON text that parses back to an equal config."""
    data = {
        "out_dir": config.out_dir,
        "generator": dataclasses.asdict(config.generator),
        "training": dataclasses.asdict(config.training),
    }
    data["training"]["head_hidden"] = list(config.training.head_hidden)
    return json.dumps(data, indent=2) + "\n"
