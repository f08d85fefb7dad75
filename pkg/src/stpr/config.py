"""Single structured run configuration: model + training + stream + output.

A run configuration is a JSON document with three nested sections ("model",
"train", "stream") plus top-level "preset" and "out". Parsing rejects unknown
keys with field-level diagnostics, applies the preset before explicit train
overrides, and materializes every default, so the emitted manifest always
contains the fully-resolved configuration. The configuration hash is the
SHA-256 of the canonical JSON form; two runs agree on it exactly when they
agree on every resolved setting.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .datagen import StreamConfig
from .errors import ConfigError
from .harness import PRESETS, TrainConfig
from .nncore import ModelConfig

SECTIONS = ("model", "train", "stream")
TOP_LEVEL_KEYS = SECTIONS + ("preset", "out")

_SECTION_TYPES = {"model": ModelConfig, "train": TrainConfig, "stream": StreamConfig}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    stream: StreamConfig
    preset: str | None = None
    out: str | None = None

    def to_dict(self) -> dict:
        """Fully-materialized document: every field of every section, no gaps."""
        doc: dict = {section: dataclasses.asdict(getattr(self, section)) for section in SECTIONS}
        doc["preset"] = self.preset
        doc["out"] = self.out
        return doc

    def config_hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(doc: dict) -> str:
    """SHA-256 over the canonical (sorted, compact) JSON encoding."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _coerce(section: str, name: str, want, value, problems: list[str]):
    """JSON numbers arrive as int/float/bool; keep ints exact, allow int→float."""
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{section}.{name}: expected a number, got {value!r}")
            return None
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{section}.{name}: expected an integer, got {value!r}")
            return None
        return value
    if want is bool:
        if not isinstance(value, bool):
            problems.append(f"{section}.{name}: expected true/false, got {value!r}")
            return None
        return value
    if want is str:
        if not isinstance(value, str):
            problems.append(f"{section}.{name}: expected a string, got {value!r}")
            return None
        return value
    return value


def _section_fields(cls) -> dict[str, type]:
    out = {}
    for f in dataclasses.fields(cls):
        want = {int: int, float: float, bool: bool, str: str}.get(f.type if isinstance(f.type, type) else None)
        if want is None:
            # dataclass field types are strings under `from __future__ import annotations`
            want = {"int": int, "float": float, "bool": bool, "str": str}.get(str(f.type), object)
        out[f.name] = want
    return out


def from_dict(doc: dict) -> RunConfig:
    """Validate and resolve a configuration document.

    Precedence within the train section: dataclass defaults, then the preset's
    fields, then explicit keys from the document.
    """
    if not isinstance(doc, dict):
        raise ConfigError([f"configuration root must be an object, got {type(doc).__name__}"])
    problems: list[str] = []
    for key in doc:
        if key not in TOP_LEVEL_KEYS:
            problems.append(f"unknown top-level key {key!r}; valid keys: {', '.join(TOP_LEVEL_KEYS)}")

    preset = doc.get("preset")
    if preset is not None and preset not in PRESETS:
        problems.append(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    out = doc.get("out")
    if out is not None and not isinstance(out, str):
        problems.append(f"out: expected a string path, got {out!r}")

    kwargs: dict[str, dict] = {}
    for section, cls in _SECTION_TYPES.items():
        given = doc.get(section, {})
        if not isinstance(given, dict):
            problems.append(f"{section}: expected an object of settings, got {given!r}")
            given = {}
        fields = _section_fields(cls)
        values: dict = {}
        if section == "train" and preset in PRESETS:
            values.update(PRESETS[preset])
        for name, value in given.items():
            if name not in fields:
                problems.append(f"{section}.{name}: unknown setting; valid settings: {', '.join(sorted(fields))}")
                continue
            coerced = _coerce(section, name, fields[name], value, problems)
            if coerced is not None:
                values[name] = coerced
        kwargs[section] = values

    if problems:
        raise ConfigError(problems)

    try:
        model = ModelConfig(**kwargs["model"])
        train = TrainConfig(**kwargs["train"])
        stream = StreamConfig(**kwargs["stream"])
    except ConfigError:
        raise
    return RunConfig(model=model, train=train, stream=stream, preset=preset, out=out)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"configuration file not found: {path}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"configuration file {path} is not valid JSON: {exc}"])
    return from_dict(doc)


def parse_set_override(item: str) -> tuple[str, object]:
    """One --set item: 'section.field=value', value parsed as JSON, else string."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError([f"--set expects section.field=value, got {item!r}"])
    parts = key.split(".")
    if len(parts) != 2 and key not in ("preset", "out"):
        raise ConfigError([f"--set key must be 'preset', 'out', or 'section.field', got {key!r}"])
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(doc: dict, overrides: list[tuple[str, object]]) -> dict:
    """Layer dotted overrides onto a raw document (before validation)."""
    out = json.loads(json.dumps(doc))
    for key, value in overrides:
        if key in ("preset", "out"):
            out[key] = value
            continue
        section, field = key.split(".", 1)
        out.setdefault(section, {})
        if not isinstance(out[section], dict):
            raise ConfigError([f"{section}: expected an object of settings, got {out[section]!r}"])
        out[section][field] = value
    return out
