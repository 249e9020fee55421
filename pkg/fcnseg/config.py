from __future__ import annotations

import re
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import pydantic

from .errors import ConfigurationError
from .evalmetric import MatchParams
from .model import ArchitectureSpec
from .segmenter import PostprocParams
from .synth import DisturbanceParams, SynthParams
from .trainloop import TrainConfig


class ModelOptions(pydantic.BaseModel):
    """Line geometry; block layout always follows ArchitectureSpec defaults."""

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    input_height: pydantic.PositiveInt = 48
    input_width: pydantic.PositiveInt = 2048

    def spec(self) -> ArchitectureSpec:
        return ArchitectureSpec(input_height=self.input_height, input_width=self.input_width)


class RunConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    train: TrainConfig = pydantic.Field(default_factory=TrainConfig)
    disturb: DisturbanceParams = pydantic.Field(default_factory=DisturbanceParams)
    post: PostprocParams = pydantic.Field(default_factory=PostprocParams)
    match: MatchParams = pydantic.Field(default_factory=MatchParams)
    synth: SynthParams = pydantic.Field(default_factory=SynthParams)
    model: ModelOptions = pydantic.Field(default_factory=ModelOptions)


SECTIONS: dict[str, type[pydantic.BaseModel]] = {
    name: info.annotation for name, info in RunConfig.model_fields.items()  # type: ignore[misc]
}

Overrides = dict[str, dict[str, Any]]

_LINE_RE = re.compile(r"^([A-Za-z_][\w]*)\.([A-Za-z_]\w*)\s*=\s*(.*)$")


def _coerce(section: str, key: str, raw: str, where: str) -> Any:
    model = SECTIONS.get(section)
    if model is None:
        raise ConfigurationError(f"{where}: unknown section {section!r}, expected one of {', '.join(SECTIONS)}")
    info = model.model_fields.get(key)
    if info is None:
        raise ConfigurationError(f"{where}: unknown key {section}.{key}")
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if "tuple" in str(info.annotation):
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw


def parse_assignment(text: str, where: str = "--set") -> tuple[str, str, Any]:
    m = _LINE_RE.match(text.strip())
    if not m:
        raise ConfigurationError(f"{where}: expected 'section.key = value', got {text.strip()!r}")
    section, key, raw = m.group(1), m.group(2), m.group(3)
    return section, key, _coerce(section, key, raw, where)


def parse_config(filepath: str | Path) -> Overrides:
    """Flat ``section.key = value`` lines; ``#`` and ``--`` start comments."""
    path = Path(filepath)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    overrides: Overrides = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith("--"):
            continue
        section, key, value = parse_assignment(stripped, f"{path}:{lineno}")
        overrides.setdefault(section, {})[key] = value
    return overrides


def merge(*layers: Mapping[str, Mapping[str, Any]]) -> Overrides:
    merged: Overrides = {}
    for layer in layers:
        for section, values in layer.items():
            merged.setdefault(section, {}).update(values)
    return merged


def build_config(
    config_file: str | Path | None = None,
    sets: Iterable[str] = (),
    flags: Mapping[str, Mapping[str, Any]] | None = None,
) -> RunConfig:
    """defaults < config file < ``--set`` assignments < explicit command-line flags."""
    layers: list[Mapping[str, Mapping[str, Any]]] = []
    if config_file is not None:
        layers.append(parse_config(config_file))
    set_layer: Overrides = {}
    for text in sets:
        section, key, value = parse_assignment(text)
        set_layer.setdefault(section, {})[key] = value
    layers.append(set_layer)
    if flags:
        layers.append({s: {k: v for k, v in vals.items() if v is not None} for s, vals in flags.items()})
    try:
        return RunConfig.model_validate(merge(*layers))
    except pydantic.ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(f"invalid configuration: {problems}") from e
