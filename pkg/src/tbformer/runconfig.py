"""INI-style run configuration with typed sections.

Sections and keys mirror :class:`ModelConfig`, :class:`ScheduleConfig` and
:class:`DataConfig`; ``[run]`` carries the seed and output directory.
Unknown sections or keys are rejected. Example::

    [model]
    H = 64
    patch = 8
    variant = full_ahfm

    [schedule]
    lr0 = 0.05
    iter_total = 2000

    [run]
    seed = 7
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .config import ConfigError, ModelConfig
from .optim import ScheduleConfig


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    count: int = 30
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    max_train: int | None = None

    @property
    def ratios(self) -> tuple[float, float, float]:
        return self.train_ratio, self.val_ratio, self.test_ratio


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "run"
    forged_weight: float = 1.0
    metrics_mode: str = "per_image"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def model_config(self) -> ModelConfig:
        """Model config with the run seed applied."""
        return self.model.with_(seed=self.run.seed)

    def to_ini(self) -> str:
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            obj = getattr(self, section)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if value is not None:
                    lines.append(f"{f.name} = {value}")
            lines.append("")
        return "\n".join(lines)


SECTIONS = ("model", "schedule", "data", "run")
_SECTION_TYPES = {"model": ModelConfig, "schedule": ScheduleConfig, "data": DataConfig, "run": RunSection}


def field_types(section: str) -> dict[str, type]:
    cls = _SECTION_TYPES[section]
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _coerce(section: str, key: str, raw: str, typ):
    optional = False
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        optional, typ = True, args[0]
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if typ is bool:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        return typ(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}") from None


def apply_overrides(cfg: RunConfig, overrides: dict[str, dict[str, str]]) -> RunConfig:
    """Return ``cfg`` with string-valued ``{section: {key: value}}`` overrides applied and validated."""
    updated = {}
    for section, values in overrides.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        types_ = field_types(section)
        changes = {}
        for key, raw in values.items():
            if key not in types_:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            changes[key] = _coerce(section, key, raw, types_[key])
        try:
            updated[section] = replace(getattr(cfg, section), **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return replace(cfg, **updated)


def parse_ini(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_run_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        cfg = apply_overrides(cfg, parse_ini(text, str(p)))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def as_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
